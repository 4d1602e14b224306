//! Image records: encoded payload plus identity and provenance.

use std::fmt;
use std::io::Cursor;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use image::{ImageFormat, ImageReader, RgbImage};

use crate::digest::Digest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImageRole {
    Target,
    Source,
    PseudoSource,
}

impl ImageRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageRole::Target => "target",
            ImageRole::Source => "source",
            ImageRole::PseudoSource => "pseudo_source",
        }
    }
}

impl fmt::Display for ImageRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ImageRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(ImageRole::Target),
            "source" => Ok(ImageRole::Source),
            "pseudo_source" => Ok(ImageRole::PseudoSource),
            other => Err(Error::Argument(format!("unknown image role `{other}`"))),
        }
    }
}

/// Links a pseudo-source image to the generation job that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub cache_key: Digest,
    pub source_digest: Digest,
    pub backend: String,
    pub seed: u64,
}

/// An encoded PNG or JPEG image with its identity.
///
/// `digest` is the SHA-256 of `bytes`; it is computed at construction and
/// never set independently.
#[derive(Clone, PartialEq)]
pub struct ImageRecord {
    id: String,
    digest: Digest,
    width: u32,
    height: u32,
    format: ImageFormat,
    bytes: Arc<[u8]>,
    split: String,
    role: ImageRole,
    provenance: Option<Provenance>,
}

impl fmt::Debug for ImageRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageRecord")
            .field("id", &self.id)
            .field("digest", &self.digest)
            .field("dims", &(self.width, self.height))
            .field("role", &self.role)
            .field("bytes", &self.bytes.len())
            .finish()
    }
}

impl ImageRecord {
    /// Wrap encoded bytes. Only PNG and JPEG are accepted; dimensions are
    /// read from the header without decoding pixels.
    pub fn from_bytes(
        id: impl Into<String>,
        bytes: impl Into<Arc<[u8]>>,
        split: impl Into<String>,
        role: ImageRole,
    ) -> Result<Self> {
        let bytes: Arc<[u8]> = bytes.into();
        let format = image::guess_format(&bytes)
            .map_err(|e| Error::Image(format!("unrecognised image payload: {e}")))?;
        if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
            return Err(Error::Image(format!("unsupported image format {format:?}")));
        }
        let (width, height) = ImageReader::with_format(Cursor::new(&bytes[..]), format)
            .into_dimensions()
            .map_err(|e| Error::Image(format!("cannot read dimensions: {e}")))?;
        if width == 0 || height == 0 {
            return Err(Error::Image("image has a zero dimension".into()));
        }
        Ok(ImageRecord {
            id: id.into(),
            digest: Digest::of(&bytes),
            width,
            height,
            format,
            bytes,
            split: split.into(),
            role,
            provenance: None,
        })
    }

    pub fn load(path: &Path, id: impl Into<String>, split: &str, role: ImageRole) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        ImageRecord::from_bytes(id, bytes, split, role)
    }

    /// Encode an RGB buffer as PNG and wrap it.
    pub fn from_rgb(
        id: impl Into<String>,
        pixels: &RgbImage,
        split: impl Into<String>,
        role: ImageRole,
    ) -> Result<Self> {
        ImageRecord::from_bytes(id, encode_png(pixels)?, split, role)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn format(&self) -> ImageFormat {
        self.format
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn split(&self) -> &str {
        &self.split
    }

    pub fn role(&self) -> ImageRole {
        self.role
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn decode_rgb(&self) -> Result<RgbImage> {
        decode_rgb(&self.bytes)
    }
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::Image(format!("decode failed: {e}")))
}

pub fn encode_png(pixels: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    pixels
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Image(format!("png encode failed: {e}")))?;
    Ok(out.into_inner())
}
