use crate::error::{Error, Result};
use crate::numeric::argmax;
use crate::task::TaskKind;
use crate::tensor::{DType, Tensor};

/// Allowed per-pixel deviation of channel sums from one for f32 maps.
pub const SIMPLEX_TOL_F32: f32 = 1e-3;
/// Allowed deviation for u8-quantized maps.
pub const SIMPLEX_TOL_U8: f32 = 2.0 / 255.0;

/// Per-pixel class posteriors, channel-major `[C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegProbMap {
    classes: usize,
    height: usize,
    width: usize,
    probs: Vec<f32>,
}

impl SegProbMap {
    /// Build from raw values, checking every pixel lies on the simplex within
    /// `tol`.
    pub fn new(classes: usize, height: usize, width: usize, probs: Vec<f32>, tol: f32) -> Result<Self> {
        let map = SegProbMap::new_unchecked(classes, height, width, probs)?;
        if let Some((y, x, sum)) = map.first_off_simplex(tol) {
            return Err(Error::Argument(format!(
                "pixel ({x},{y}) sums to {sum}, beyond tolerance {tol}"
            )));
        }
        Ok(map)
    }

    pub(crate) fn new_unchecked(classes: usize, height: usize, width: usize, probs: Vec<f32>) -> Result<Self> {
        if classes == 0 || height == 0 || width == 0 {
            return Err(Error::Argument("probability map with an empty dimension".into()));
        }
        if probs.len() != classes * height * width {
            return Err(Error::Argument(format!(
                "[{classes},{height},{width}] needs {} values, got {}",
                classes * height * width,
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Argument("probabilities must be finite and nonnegative".into()));
        }
        Ok(SegProbMap {
            classes,
            height,
            width,
            probs,
        })
    }

    /// Decode a `[C, H, W]` tensor; u8 payloads are dequantized as `v / 255`
    /// and checked against the looser quantization tolerance.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [c, h, w] = t.dims() else {
            return Err(Error::Argument(format!("expected [C,H,W], got {:?}", t.dims())));
        };
        let tol = match t.dtype() {
            DType::F32 => SIMPLEX_TOL_F32,
            DType::U8 => SIMPLEX_TOL_U8,
        };
        SegProbMap::new(*c, *h, *w, t.to_f32_probs(), tol)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(vec![self.classes, self.height, self.width], self.probs.clone())
            .expect("validated map")
    }

    /// Quantize to u8 (`round(p * 255)`).
    pub fn to_tensor_u8(&self) -> Tensor {
        let data = self.probs.iter().map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        Tensor::from_u8(vec![self.classes, self.height, self.width], data).expect("validated map")
    }

    /// Uniform distribution at every pixel.
    pub fn uniform(classes: usize, height: usize, width: usize) -> Self {
        SegProbMap {
            classes,
            height,
            width,
            probs: vec![1.0 / classes as f32; classes * height * width],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.classes, self.height, self.width)
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn get(&self, class: usize, y: usize, x: usize) -> f32 {
        self.probs[(class * self.height + y) * self.width + x]
    }

    /// Channel vector of one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> Vec<f32> {
        (0..self.classes).map(|c| self.get(c, y, x)).collect()
    }

    fn first_off_simplex(&self, tol: f32) -> Option<(usize, usize, f64)> {
        let plane = self.height * self.width;
        (0..plane).find_map(|i| {
            let sum: f64 = (0..self.classes).map(|c| f64::from(self.probs[c * plane + i])).sum();
            ((sum - 1.0).abs() > f64::from(tol)).then_some((i / self.width, i % self.width, sum))
        })
    }

    /// Rescale every pixel to sum to one. Pixels with zero mass become uniform.
    pub fn renormalized(mut self) -> Self {
        let plane = self.height * self.width;
        for i in 0..plane {
            let sum: f32 = (0..self.classes).map(|c| self.probs[c * plane + i]).sum();
            for c in 0..self.classes {
                let p = &mut self.probs[c * plane + i];
                *p = if sum > 0.0 { *p / sum } else { 1.0 / self.classes as f32 };
            }
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !finite || self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(Error::Argument(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        f64::from(self.x2 - self.x1) * f64::from(self.y2 - self.y1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_id: u32,
    pub score: f32,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(detections: Vec<Detection>) -> Result<Self> {
        for d in &detections {
            d.bbox.validate()?;
            if !d.score.is_finite() || !(0.0..=1.0).contains(&d.score) {
                return Err(Error::Argument(format!("score {} outside [0,1]", d.score)));
            }
        }
        Ok(DetectionSet { detections })
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

/// Which of the full set of classes take part in evaluation (for example the
/// 200 ImageNet-R classes out of 1000).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    allowed: Vec<bool>,
}

impl ClassMask {
    pub fn new(allowed: Vec<bool>) -> Result<Self> {
        if !allowed.iter().any(|&a| a) {
            return Err(Error::Argument("class mask admits no class".into()));
        }
        Ok(ClassMask { allowed })
    }

    pub fn all(classes: usize) -> Self {
        ClassMask {
            allowed: vec![true; classes],
        }
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }

    pub fn count(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    pub fn allows(&self, class: usize) -> bool {
        self.allowed.get(class).copied().unwrap_or(false)
    }
}

/// Whole-image class posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbs {
    probs: Vec<f32>,
}

impl ClassProbs {
    pub fn new(probs: Vec<f32>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Argument("empty class probability vector".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Argument("class probabilities must be finite and nonnegative".into()));
        }
        let sum: f64 = probs.iter().map(|&p| f64::from(p)).sum();
        if (sum - 1.0).abs() > f64::from(SIMPLEX_TOL_F32) {
            return Err(Error::Argument(format!("class probabilities sum to {sum}")));
        }
        Ok(ClassProbs { probs })
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Zero out classes outside `mask` and renormalize. If the admitted
    /// classes carry no mass the result is uniform over them.
    pub fn masked(&self, mask: &ClassMask) -> Result<ClassProbs> {
        if mask.len() != self.probs.len() {
            return Err(Error::Argument(format!(
                "mask over {} classes applied to {} probabilities",
                mask.len(),
                self.probs.len()
            )));
        }
        let kept: Vec<f32> = self
            .probs
            .iter()
            .enumerate()
            .map(|(i, &p)| if mask.allows(i) { p } else { 0.0 })
            .collect();
        let sum: f64 = kept.iter().map(|&p| f64::from(p)).sum();
        let probs = if sum > 0.0 {
            kept.iter().map(|&p| (f64::from(p) / sum) as f32).collect()
        } else {
            let n = mask.count() as f32;
            (0..kept.len()).map(|i| if mask.allows(i) { 1.0 / n } else { 0.0 }).collect()
        };
        Ok(ClassProbs { probs })
    }

    /// Argmax over the classes admitted by `mask` (lowest index wins ties).
    /// Renormalizing does not move the argmax, so raw values are compared.
    pub fn predicted(&self, mask: Option<&ClassMask>) -> Result<usize> {
        let Some(m) = mask else {
            return Ok(argmax(&self.probs).expect("nonempty probabilities"));
        };
        if m.len() != self.probs.len() {
            return Err(Error::Argument(format!(
                "mask over {} classes applied to {} probabilities",
                m.len(),
                self.probs.len()
            )));
        }
        self.probs
            .iter()
            .enumerate()
            .filter(|(i, _)| m.allows(*i))
            .fold(None, |best: Option<(usize, f32)>, (i, &p)| match best {
                Some((_, b)) if p <= b => best,
                _ => Some((i, p)),
            })
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Argument("class mask admits no class".into()))
    }
}

/// Output of the discriminative model for one image.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Segmentation(SegProbMap),
    Detection(DetectionSet),
    Classification(ClassProbs),
}

impl Prediction {
    pub fn task(&self) -> TaskKind {
        match self {
            Prediction::Segmentation(_) => TaskKind::Segmentation,
            Prediction::Detection(_) => TaskKind::Detection,
            Prediction::Classification(_) => TaskKind::Classification,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seg_map_checks_simplex() {
        assert!(SegProbMap::new(2, 1, 2, vec![0.5, 1.0, 0.5, 0.0], SIMPLEX_TOL_F32).is_ok());
        assert!(SegProbMap::new(2, 1, 2, vec![0.5, 1.0, 0.6, 0.0], SIMPLEX_TOL_F32).is_err());
        assert!(SegProbMap::new(2, 1, 2, vec![0.5, 1.0, 0.5], SIMPLEX_TOL_F32).is_err());
    }

    #[test]
    fn u8_tensor_tolerance() {
        // 3 classes at 85/255 each sum to exactly 1; 84 each is 3/255 short
        let ok = Tensor::from_u8(vec![3, 1, 1], vec![85, 85, 85]).unwrap();
        assert!(SegProbMap::from_tensor(&ok).is_ok());
        let close = Tensor::from_u8(vec![3, 1, 1], vec![85, 85, 84]).unwrap();
        assert!(SegProbMap::from_tensor(&close).is_ok());
        let off = Tensor::from_u8(vec![3, 1, 1], vec![84, 84, 84]).unwrap();
        assert!(SegProbMap::from_tensor(&off).is_err());
    }

    #[test]
    fn tensor_roundtrip() {
        let m = SegProbMap::new(2, 2, 1, vec![0.25, 1.0, 0.75, 0.0], SIMPLEX_TOL_F32).unwrap();
        assert_eq!(SegProbMap::from_tensor(&m.to_tensor()).unwrap(), m);
        assert_eq!(m.pixel(0, 0), vec![0.25, 0.75]);
    }

    #[test]
    fn detection_validation() {
        let good = Detection { class_id: 0, score: 0.5, bbox: BBox { x1: 0.0, y1: 0.0, x2: 1.0, y2: 1.0 } };
        assert!(DetectionSet::new(vec![good]).is_ok());
        let flipped = Detection { bbox: BBox { x1: 2.0, ..good.bbox }, ..good };
        assert!(DetectionSet::new(vec![flipped]).is_err());
        let bad_score = Detection { score: 1.5, ..good };
        assert!(DetectionSet::new(vec![bad_score]).is_err());
    }

    #[test]
    fn masking_forces_second_choice() {
        let p = ClassProbs::new(vec![0.6, 0.3, 0.1]).unwrap();
        let mask = ClassMask::new(vec![false, true, true]).unwrap();
        assert_eq!(p.predicted(None).unwrap(), 0);
        assert_eq!(p.predicted(Some(&mask)).unwrap(), 1);
        let m = p.masked(&mask).unwrap();
        assert!((m.probs()[1] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn masking_is_idempotent() {
        let p = ClassProbs::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mask = ClassMask::new(vec![true, false, true, false]).unwrap();
        let once = p.masked(&mask).unwrap();
        let twice = once.masked(&mask).unwrap();
        for (a, b) in once.probs().iter().zip(twice.probs()) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}
