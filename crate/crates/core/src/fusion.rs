//! Combining the predictions for the original and the pseudo-source image.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::inference::{Prediction, SegProbMap};
use crate::labels::LabelMap;
use crate::task::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Convex combination of the two posteriors (segmentation only).
    FuseProbs,
    /// The pseudo-source prediction alone.
    TtmOnly,
    /// The original-image prediction alone; used for baseline rows.
    BaseOnly,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::FuseProbs => "fuse_probs",
            FusionMode::TtmOnly => "ttm_only",
            FusionMode::BaseOnly => "base_only",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fuse_probs" => Ok(FusionMode::FuseProbs),
            "ttm_only" => Ok(FusionMode::TtmOnly),
            "base_only" => Ok(FusionMode::BaseOnly),
            other => Err(Error::Config(format!("unknown fusion mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionPolicy {
    pub task: TaskKind,
    /// Weight of the pseudo-source posterior.
    pub weight_ps: f32,
    pub mode: FusionMode,
}

impl FusionPolicy {
    /// Equal-weight averaging for segmentation, the pseudo-source prediction
    /// alone for detection and classification.
    pub fn for_task(task: TaskKind) -> Self {
        let mode = match task {
            TaskKind::Segmentation => FusionMode::FuseProbs,
            TaskKind::Detection | TaskKind::Classification => FusionMode::TtmOnly,
        };
        FusionPolicy {
            task,
            weight_ps: 0.5,
            mode,
        }
    }

    pub fn base_only(task: TaskKind) -> Self {
        FusionPolicy {
            mode: FusionMode::BaseOnly,
            ..FusionPolicy::for_task(task)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.weight_ps) {
            return Err(Error::Config(format!("weight_ps {} outside [0,1]", self.weight_ps)));
        }
        if self.mode == FusionMode::FuseProbs && self.task != TaskKind::Segmentation {
            return Err(Error::Config(format!("fuse_probs is not defined for {}", self.task)));
        }
        Ok(())
    }
}

/// `w * p_ps + (1 - w) * p_t`, elementwise.
pub fn fuse_segmentation(p_ps: &SegProbMap, p_t: &SegProbMap, w: f32) -> Result<SegProbMap> {
    if p_ps.dims() != p_t.dims() {
        return Err(Error::Fusion(format!(
            "pseudo-source map {:?} vs target map {:?} (C,H,W)",
            p_ps.dims(),
            p_t.dims()
        )));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Fusion(format!("weight {w} outside [0,1]")));
    }
    let probs = p_ps
        .probs()
        .iter()
        .zip(p_t.probs())
        .map(|(&a, &b)| if a == b { a } else { w * a + (1.0 - w) * b })
        .collect();
    let (c, h, width) = p_t.dims();
    SegProbMap::new_unchecked(c, h, width, probs)
}

/// The prediction that gets scored for this image under `policy`.
pub fn select_output(base: &Prediction, ttm: &Prediction, policy: &FusionPolicy) -> Result<Prediction> {
    for p in [base, ttm] {
        if p.task() != policy.task {
            return Err(Error::Fusion(format!(
                "{} prediction under a {} policy",
                p.task(),
                policy.task
            )));
        }
    }
    match policy.mode {
        FusionMode::BaseOnly => Ok(base.clone()),
        FusionMode::TtmOnly => Ok(ttm.clone()),
        FusionMode::FuseProbs => match (ttm, base) {
            (Prediction::Segmentation(ps), Prediction::Segmentation(t)) => {
                Ok(Prediction::Segmentation(fuse_segmentation(ps, t, policy.weight_ps)?))
            }
            _ => Err(Error::Fusion(format!("cannot average {} predictions", policy.task))),
        },
    }
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn argmax_map(p: &SegProbMap) -> LabelMap {
    let (c, h, w) = p.dims();
    let plane = h * w;
    let probs = p.probs();
    let mut labels = vec![0u8; plane];
    let mut best = probs[..plane].to_vec();
    for k in 1..c {
        let channel = &probs[k * plane..(k + 1) * plane];
        for i in 0..plane {
            if channel[i] > best[i] {
                best[i] = channel[i];
                labels[i] = k as u8;
            }
        }
    }
    LabelMap::new(w, h, labels).expect("dims come from a valid map")
}
