use image::Rgb;

use super::prediction::{BBox, ClassProbs, Detection, DetectionSet, Prediction, SegProbMap};
use super::PredictionService;
use crate::error::Result;
use crate::image::ImageRecord;
use crate::task::TaskKind;

/// Saturation below which a pixel counts as achromatic (class 0).
const ACHROMATIC_SATURATION: f32 = 0.125;

/// Class of one pixel under the hue oracle, plus its confidence.
///
/// Achromatic pixels are class 0. Chromatic pixels fall into one of
/// `classes - 1` equal hue sectors starting at 0°, numbered from 1. The
/// confidence is the HSV value `max(r, g, b) / 255`.
pub fn hue_class(px: Rgb<u8>, classes: usize) -> (usize, f32) {
    let [r, g, b] = px.0.map(f32::from);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let value = max / 255.0;
    if classes <= 1 || max == 0.0 || (max - min) / max < ACHROMATIC_SATURATION {
        return (0, value);
    }
    let delta = max - min;
    let hue = if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sectors = (classes - 1) as f32;
    let sector = ((hue / 360.0 * sectors).floor() as usize).min(classes - 2);
    (1 + sector, value)
}

/// A model whose answers are pure functions of pixel colour.
///
/// * segmentation: per-pixel posterior peaked on [`hue_class`] with mass
///   `1/C + (1 - 1/C) * value`, the rest spread evenly;
/// * detection: one box per chromatic class, spanning all its pixels, scored
///   by the fraction of the box it fills;
/// * classification: the normalized histogram of pixel classes.
#[derive(Debug, Clone)]
pub struct HueOracle {
    id: String,
    classes: usize,
}

impl HueOracle {
    pub fn new(id: impl Into<String>, classes: usize) -> Self {
        assert!(classes >= 1, "hue oracle needs at least one class");
        HueOracle {
            id: id.into(),
            classes,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn segment(&self, image: &ImageRecord) -> Result<SegProbMap> {
        let px = image.decode_rgb()?;
        let (w, h) = (px.width() as usize, px.height() as usize);
        let c = self.classes;
        let plane = w * h;
        let mut probs = vec![0f32; c * plane];
        for (x, y, p) in px.enumerate_pixels() {
            let i = y as usize * w + x as usize;
            let (class, value) = hue_class(*p, c);
            if c == 1 {
                probs[i] = 1.0;
                continue;
            }
            let peak = 1.0 / c as f32 + (1.0 - 1.0 / c as f32) * value;
            let rest = (1.0 - peak) / (c - 1) as f32;
            for k in 0..c {
                probs[k * plane + i] = if k == class { peak } else { rest };
            }
        }
        SegProbMap::new(c, h, w, probs, super::SIMPLEX_TOL_F32)
    }

    fn detect(&self, image: &ImageRecord) -> Result<DetectionSet> {
        let px = image.decode_rgb()?;
        // (min_x, min_y, max_x, max_y, count) per class
        let mut extents: Vec<Option<(u32, u32, u32, u32, u64)>> = vec![None; self.classes];
        for (x, y, p) in px.enumerate_pixels() {
            let (class, _) = hue_class(*p, self.classes);
            if class == 0 {
                continue;
            }
            let e = extents[class].get_or_insert((x, y, x, y, 0));
            e.0 = e.0.min(x);
            e.1 = e.1.min(y);
            e.2 = e.2.max(x);
            e.3 = e.3.max(y);
            e.4 += 1;
        }
        let detections = extents
            .iter()
            .enumerate()
            .filter_map(|(class, e)| {
                let (x0, y0, x1, y1, n) = (*e)?;
                let bbox = BBox {
                    x1: x0 as f32,
                    y1: y0 as f32,
                    x2: (x1 + 1) as f32,
                    y2: (y1 + 1) as f32,
                };
                Some(Detection {
                    class_id: class as u32,
                    score: (n as f64 / bbox.area()) as f32,
                    bbox,
                })
            })
            .collect();
        DetectionSet::new(detections)
    }

    fn classify(&self, image: &ImageRecord) -> Result<ClassProbs> {
        let px = image.decode_rgb()?;
        let mut counts = vec![0u64; self.classes];
        for p in px.pixels() {
            counts[hue_class(*p, self.classes).0] += 1;
        }
        let total = counts.iter().sum::<u64>() as f64;
        ClassProbs::new(counts.iter().map(|&n| (n as f64 / total) as f32).collect())
    }
}

impl PredictionService for HueOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, image: &ImageRecord, task: TaskKind) -> Result<Prediction> {
        Ok(match task {
            TaskKind::Segmentation => Prediction::Segmentation(self.segment(image)?),
            TaskKind::Detection => Prediction::Detection(self.detect(image)?),
            TaskKind::Classification => Prediction::Classification(self.classify(image)?),
        })
    }
}
