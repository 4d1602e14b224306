//! Scoring: mIoU, mAP@50, top-1, seed aggregation and relative gains.
//!
//! Values are kept at full precision; rounding to one decimal happens only
//! when a report is rendered.

mod detection;
mod segmentation;

pub use detection::{
    ap_from_ranked, average_precision, iou_box, map50, DetectionAccumulator, GroundTruthBox, IOU_THRESHOLD,
};
pub use segmentation::{miou, ConfusionMatrix, MiouResult};

use std::fmt;

use crate::error::{Error, Result};
use crate::inference::{ClassMask, ClassProbs};

/// Whether the (masked) argmax of `probs` is `gt`.
pub fn top1(probs: &ClassProbs, gt: usize, mask: Option<&ClassMask>) -> Result<bool> {
    if let Some(m) = mask {
        if !m.allows(gt) {
            return Err(Error::Metric(format!("ground-truth class {gt} is outside the class mask")));
        }
    } else if gt >= probs.len() {
        return Err(Error::Metric(format!("ground-truth class {gt} with {} classes", probs.len())));
    }
    Ok(probs.predicted(mask)? == gt)
}

/// Running top-1 tally.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccuracyCounter {
    pub correct: u64,
    pub total: u64,
}

impl AccuracyCounter {
    pub fn add(&mut self, correct: bool) {
        self.correct += u64::from(correct);
        self.total += 1;
    }

    pub fn merge(&mut self, other: AccuracyCounter) {
        self.correct += other.correct;
        self.total += other.total;
    }

    /// Accuracy in percent.
    pub fn accuracy(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::Metric("empty evaluation".into()));
        }
        Ok(100.0 * self.correct as f64 / self.total as f64)
    }
}

/// Top-1 accuracy in percent over `(probs, gt)` pairs.
pub fn accuracy(samples: &[(ClassProbs, usize)], mask: Option<&ClassMask>) -> Result<f64> {
    let mut counter = AccuracyCounter::default();
    for (p, gt) in samples {
        counter.add(top1(p, *gt, mask)?);
    }
    counter.accuracy()
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedStats {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl fmt::Display for SeedStats {
    /// `m ± s` with one decimal each.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} ± {:.1}", self.mean, self.std)
    }
}

pub fn aggregate_seeds(values: &[f64]) -> Result<SeedStats> {
    if values.is_empty() {
        return Err(Error::Metric("no seed values".into()));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok(SeedStats {
            values: values.to_vec(),
            mean: values[0],
            std: 0.0,
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(SeedStats {
        values: values.to_vec(),
        mean,
        std,
    })
}

/// `100 * (new - base) / base`.
pub fn relative_delta(base: f64, new: f64) -> Result<f64> {
    if !(base > 0.0) {
        return Err(Error::Metric(format!("relative change from base {base}")));
    }
    Ok(100.0 * (new - base) / base)
}

/// Signed percentage with one decimal, e.g. `+21.8%`.
pub fn format_delta(delta: f64) -> String {
    let rounded = (delta * 10.0).round() / 10.0;
    if rounded >= 0.0 {
        format!("+{:.1}%", rounded.abs())
    } else {
        format!("{rounded:.1}%")
    }
}
