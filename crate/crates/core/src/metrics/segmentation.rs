use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_INDEX};

/// Pixel confusion counts, rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Tally one image. Ground-truth pixels equal to 255 are skipped.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
            return Err(Error::Metric(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            )));
        }
        let c = self.classes;
        // Validate first so a bad image leaves the matrix untouched.
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g == IGNORE_INDEX {
                continue;
            }
            if usize::from(g) >= c {
                return Err(Error::Metric(format!("ground-truth class {g} with {c} classes")));
            }
            if usize::from(p) >= c {
                return Err(Error::Metric(format!("predicted class {p} with {c} classes")));
            }
        }
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g != IGNORE_INDEX {
                self.counts[usize::from(g) * c + usize::from(p)] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Metric(format!(
                "merging {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiouResult {
    /// IoU in percent per class; `None` where the class never occurs in
    /// either map.
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes with nonzero union, in percent.
    pub mean: f64,
}

pub fn miou(cm: &ConfusionMatrix) -> Result<MiouResult> {
    let c = cm.classes();
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let tp = cm.get(k, k);
            let fn_: u64 = (0..c).map(|j| cm.get(k, j)).sum::<u64>() - tp;
            let fp: u64 = (0..c).map(|i| cm.get(i, k)).sum::<u64>() - tp;
            let union = tp + fp + fn_;
            (union > 0).then(|| 100.0 * tp as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Metric("empty evaluation".into()));
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok(MiouResult { per_class, mean })
}
