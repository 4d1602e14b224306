use image::imageops::{self, FilterType};

use crate::error::{Error, Result};
use crate::image::{encode_png, ImageRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignmentRecord {
    pub original_dims: (u32, u32),
    pub generated_dims: (u32, u32),
    pub resample: Resample,
    pub applied: bool,
}

/// Resample `generated` to `original_dims` (width, height) with bilinear
/// filtering. Images already at the right size are returned unchanged.
pub fn align_to_original(
    generated: &ImageRecord,
    original_dims: (u32, u32),
) -> Result<(ImageRecord, AlignmentRecord)> {
    let mut record = AlignmentRecord {
        original_dims,
        generated_dims: generated.dims(),
        resample: Resample::Bilinear,
        applied: false,
    };
    if generated.dims() == original_dims {
        return Ok((generated.clone(), record));
    }
    let (w, h) = original_dims;
    if w == 0 || h == 0 {
        return Err(Error::Alignment(format!("target dims {w}x{h} are empty")));
    }
    let pixels = generated
        .decode_rgb()
        .map_err(|e| Error::Alignment(format!("cannot decode generated image: {e}")))?;
    let resized = imageops::resize(&pixels, w, h, FilterType::Triangle);
    let bytes = encode_png(&resized).map_err(|e| Error::Alignment(e.to_string()))?;
    let mut aligned = ImageRecord::from_bytes(generated.id(), bytes, generated.split(), generated.role())
        .map_err(|e| Error::Alignment(e.to_string()))?;
    if let Some(p) = generated.provenance() {
        aligned = aligned.with_provenance(p.clone());
    }
    record.applied = true;
    Ok((aligned, record))
}
