//! Small numeric helpers shared by the inference client, fusion and metrics.

use crate::error::{Error, Result};

/// Max-subtracted softmax.
pub fn softmax(logits: &[f32]) -> Result<Vec<f32>> {
    if logits.is_empty() {
        return Err(Error::Argument("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("softmax input contains a non-finite value".into()));
    }
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&v| f64::from(v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| (e / sum) as f32).collect())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
