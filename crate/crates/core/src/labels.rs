use crate::error::{Error, Result};

pub const IGNORE_INDEX: u8 = 255;

/// Per-pixel class ids, row-major `[height, width]`. `255` marks pixels
/// excluded from evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::Argument(format!(
                "label map {width}x{height} cannot hold {} labels",
                labels.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        LabelMap {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Read a single-channel PNG of label ids.
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| Error::Image(format!("label map decode failed: {e}")))?
            .to_luma8();
        let (w, h) = img.dimensions();
        LabelMap::new(w as usize, h as usize, img.into_raw())
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .expect("dims checked at construction");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("label map encode failed: {e}")))?;
        Ok(out.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip() {
        let m = LabelMap::new(3, 2, vec![0, 1, 2, 255, 7, 18]).unwrap();
        assert_eq!(LabelMap::from_png(&m.to_png().unwrap()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_shape() {
        assert!(LabelMap::new(2, 2, vec![0; 3]).is_err());
        assert!(LabelMap::new(0, 2, vec![]).is_err());
    }
}
