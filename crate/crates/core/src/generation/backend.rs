use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use image::RgbImage;
use serde::Deserialize;
use serde_json::json;

use super::{BackendKind, BackendRef};
use crate::error::{Error, Result};
use crate::http::HttpTransport;
use crate::image::{encode_png, ImageRecord};
use crate::retry::RetryPolicy;

#[derive(Debug, Clone)]
pub struct BackendOutput {
    pub bytes: Vec<u8>,
    pub meta: BTreeMap<String, String>,
}

/// An image editing model. Implementations must be callable from several
/// workers at once.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn transform(
        &self,
        image: &ImageRecord,
        prompt: &str,
        seed: u64,
        params: &BTreeMap<String, String>,
    ) -> Result<BackendOutput>;
}

/// Returns the input bytes unchanged.
#[derive(Debug, Clone)]
pub struct MockIdentity {
    id: String,
}

impl MockIdentity {
    pub fn new(id: impl Into<String>) -> Self {
        MockIdentity { id: id.into() }
    }
}

impl Backend for MockIdentity {
    fn id(&self) -> &str {
        &self.id
    }

    fn transform(
        &self,
        image: &ImageRecord,
        _: &str,
        _: u64,
        _: &BTreeMap<String, String>,
    ) -> Result<BackendOutput> {
        Ok(BackendOutput {
            bytes: image.bytes().to_vec(),
            meta: BTreeMap::from([("mock".to_string(), "identity".to_string())]),
        })
    }
}

fn invert_rows(pixels: &mut RgbImage, skip_rows: u32) {
    for (_, y, px) in pixels.enumerate_pixels_mut() {
        if y >= skip_rows {
            for c in px.0.iter_mut() {
                *c = 255 - *c;
            }
        }
    }
}

/// Pixelwise `v -> 255 - v`; applying it twice restores the original pixels.
#[derive(Debug, Clone)]
pub struct MockInvert {
    id: String,
}

impl MockInvert {
    pub fn new(id: impl Into<String>) -> Self {
        MockInvert { id: id.into() }
    }
}

impl Backend for MockInvert {
    fn id(&self) -> &str {
        &self.id
    }

    fn transform(
        &self,
        image: &ImageRecord,
        _: &str,
        _: u64,
        _: &BTreeMap<String, String>,
    ) -> Result<BackendOutput> {
        let mut pixels = image.decode_rgb().map_err(|e| Error::generation(&self.id, e.to_string()))?;
        invert_rows(&mut pixels, 0);
        Ok(BackendOutput {
            bytes: encode_png(&pixels)?,
            meta: BTreeMap::from([("mock".to_string(), "invert".to_string())]),
        })
    }
}

/// Like [`MockInvert`], but the top `(seed % 7) / 16` of the rows are left
/// untouched, so the quality of the output depends on the seed.
#[derive(Debug, Clone)]
pub struct MockInvertJitter {
    id: String,
}

impl MockInvertJitter {
    pub const PERIOD: u64 = 7;

    pub fn new(id: impl Into<String>) -> Self {
        MockInvertJitter { id: id.into() }
    }
}

impl Backend for MockInvertJitter {
    fn id(&self) -> &str {
        &self.id
    }

    fn transform(
        &self,
        image: &ImageRecord,
        _: &str,
        seed: u64,
        _: &BTreeMap<String, String>,
    ) -> Result<BackendOutput> {
        let mut pixels = image.decode_rgb().map_err(|e| Error::generation(&self.id, e.to_string()))?;
        let skipped = (seed % Self::PERIOD) as u32 * pixels.height() / 16;
        invert_rows(&mut pixels, skipped);
        Ok(BackendOutput {
            bytes: encode_png(&pixels)?,
            meta: BTreeMap::from([
                ("mock".to_string(), "invert-jitter".to_string()),
                ("skipped_rows".to_string(), skipped.min(pixels.height()).to_string()),
            ]),
        })
    }
}

/// `POST {endpoint}/v1/transform` with `{image, prompt, seed, params}`;
/// the response is `{image, meta}` with base64 image bytes.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    id: String,
    transport: HttpTransport,
}

impl HttpBackend {
    pub fn new(id: &str, endpoint: &str, retry: RetryPolicy, timeout: Duration) -> Self {
        HttpBackend {
            id: id.to_string(),
            transport: HttpTransport::new(id, endpoint, retry, timeout),
        }
    }
}

#[derive(Deserialize)]
struct TransformResponse {
    image: String,
    #[serde(default)]
    meta: serde_json::Map<String, serde_json::Value>,
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn transform(
        &self,
        image: &ImageRecord,
        prompt: &str,
        seed: u64,
        params: &BTreeMap<String, String>,
    ) -> Result<BackendOutput> {
        let body = json!({
            "image": BASE64.encode(image.bytes()),
            "prompt": prompt,
            "seed": seed,
            "params": params,
        });
        let resp = self
            .transport
            .post_json("/v1/transform", &body)
            .map_err(|e| Error::generation(&self.id, e.to_string()))?;
        let parsed: TransformResponse = serde_json::from_slice(&resp.body)
            .map_err(|e| Error::generation(&self.id, format!("malformed response: {e}")))?;
        let bytes = BASE64
            .decode(parsed.image.as_bytes())
            .map_err(|e| Error::generation(&self.id, format!("image is not base64: {e}")))?;
        let meta = parsed
            .meta
            .into_iter()
            .map(|(k, v)| {
                let v = match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                (k, v)
            })
            .collect();
        Ok(BackendOutput { bytes, meta })
    }
}

pub fn build_backend(
    backend: &BackendRef,
    retry: &RetryPolicy,
    timeout: Duration,
) -> Result<Arc<dyn Backend>> {
    backend.validate()?;
    Ok(match backend.kind {
        BackendKind::MockIdentity => Arc::new(MockIdentity::new(&backend.id)),
        BackendKind::MockInvert => Arc::new(MockInvert::new(&backend.id)),
        BackendKind::MockInvertJitter => Arc::new(MockInvertJitter::new(&backend.id)),
        BackendKind::Http => Arc::new(HttpBackend::new(
            &backend.id,
            backend.endpoint.as_deref().unwrap_or_default(),
            retry.clone(),
            timeout,
        )),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::{transform, GenerationJob};
    use crate::image::ImageRole;
    use crate::prompting::SourcePrompt;
    use image::Rgb;

    fn sample() -> ImageRecord {
        let px = RgbImage::from_fn(5, 4, |x, y| Rgb([x as u8 * 40, y as u8 * 60, 7]));
        ImageRecord::from_rgb("img", &px, "val", ImageRole::Target).unwrap()
    }

    fn job(img: &ImageRecord, kind: BackendKind) -> GenerationJob {
        GenerationJob::new(
            img.clone(),
            Arc::new(SourcePrompt::canned("sunny").unwrap()),
            BackendRef::mock(kind.as_str(), kind),
            3,
        )
    }

    #[test]
    fn identity_passes_bytes_through() {
        let img = sample();
        let (out, _) = transform(&job(&img, BackendKind::MockIdentity), &MockIdentity::new("id")).unwrap();
        assert_eq!(out.bytes(), img.bytes());
        assert_eq!(out.role(), ImageRole::PseudoSource);
        assert_eq!(out.provenance().unwrap().source_digest, img.digest());
        assert_eq!(img.role(), ImageRole::Target);
    }

    #[test]
    fn invert_is_an_involution() {
        let img = sample();
        let backend = MockInvert::new("inv");
        let (once, _) = transform(&job(&img, BackendKind::MockInvert), &backend).unwrap();
        assert_ne!(once.decode_rgb().unwrap(), img.decode_rgb().unwrap());
        let (twice, _) = transform(&job(&once, BackendKind::MockInvert), &backend).unwrap();
        assert_eq!(twice.decode_rgb().unwrap(), img.decode_rgb().unwrap());
    }

    #[test]
    fn jitter_leaves_top_rows() {
        let src = RgbImage::from_fn(5, 32, |x, y| Rgb([x as u8 * 40, y as u8 * 6, 7]));
        let img = ImageRecord::from_rgb("tall", &src, "val", ImageRole::Target).unwrap();
        let out = MockInvertJitter::new("j")
            .transform(&img, "p", 9, &BTreeMap::new())
            .unwrap();
        assert_eq!(out.meta["skipped_rows"], "4");
        let px = crate::image::decode_rgb(&out.bytes).unwrap();
        for x in 0..5 {
            assert_eq!(px.get_pixel(x, 3), src.get_pixel(x, 3));
            assert_eq!(px.get_pixel(x, 4).0[2], 255 - src.get_pixel(x, 4).0[2]);
        }
    }

    #[test]
    fn http_backend_requires_endpoint() {
        let mut r = BackendRef::mock("qie-2509", BackendKind::Http);
        assert!(build_backend(&r, &RetryPolicy::default(), Duration::from_secs(1)).is_err());
        r.endpoint = Some("http://127.0.0.1:9".into());
        assert!(build_backend(&r, &RetryPolicy::default(), Duration::from_secs(1)).is_ok());
    }
}
