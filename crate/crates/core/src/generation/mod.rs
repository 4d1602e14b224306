//! Pseudo-source image generation.
//!
//! A backend edits a target image according to the source prompt. Results
//! are stored in a content-addressed cache keyed by everything that can
//! influence the output, so a given (image, prompt, backend, params, seed)
//! is generated at most once. Generated images are resampled back to the
//! original resolution before inference so that predictions stay
//! pixel-aligned.

mod align;
mod backend;
mod cache;

pub use align::{align_to_original, AlignmentRecord, Resample};
pub use backend::{
    build_backend, Backend, BackendOutput, HttpBackend, MockIdentity, MockInvert,
    MockInvertJitter,
};
pub use cache::{ArtifactCache, CacheStats, CachedMeta};
pub(crate) use cache::write_atomic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::image::{ImageRecord, ImageRole, Provenance};
use crate::prompting::SourcePrompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeedPolicy {
    /// Seed 0 for every image and run.
    Fixed,
    /// A seed derived from the run seed and the image digest.
    PerImage,
    /// The run seed, shared by every image of the run.
    #[default]
    PerRun,
}

impl SeedPolicy {
    pub fn resolve(self, run_seed: u64, image: Digest) -> u64 {
        match self {
            SeedPolicy::Fixed => 0,
            SeedPolicy::PerRun => run_seed,
            SeedPolicy::PerImage => {
                let d = Digest::of_parts([&run_seed.to_le_bytes()[..], image.as_bytes()]);
                let mut head = [0u8; 8];
                head.copy_from_slice(&d.as_bytes()[..8]);
                u64::from_le_bytes(head)
            }
        }
    }
}

impl FromStr for SeedPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(SeedPolicy::Fixed),
            "per_image" => Ok(SeedPolicy::PerImage),
            "per_run" => Ok(SeedPolicy::PerRun),
            other => Err(Error::Argument(format!("unknown seed policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    MockIdentity,
    MockInvert,
    MockInvertJitter,
    Http,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::MockIdentity => "mock-identity",
            BackendKind::MockInvert => "mock-invert",
            BackendKind::MockInvertJitter => "mock-invert-jitter",
            BackendKind::Http => "http",
        }
    }

    pub fn is_mock(self) -> bool {
        self != BackendKind::Http
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock-identity" => Ok(BackendKind::MockIdentity),
            "mock-invert" => Ok(BackendKind::MockInvert),
            "mock-invert-jitter" => Ok(BackendKind::MockInvertJitter),
            "http" => Ok(BackendKind::Http),
            other => Err(Error::Argument(format!("unknown backend kind `{other}`"))),
        }
    }
}

/// Identifies one image editing backend and its fixed parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendRef {
    pub id: String,
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub params: BTreeMap<String, String>,
    pub seed_policy: SeedPolicy,
}

impl BackendRef {
    pub fn mock(id: &str, kind: BackendKind) -> Self {
        BackendRef {
            id: id.to_string(),
            kind,
            endpoint: None,
            params: BTreeMap::new(),
            seed_policy: SeedPolicy::PerRun,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Config("backend id is empty".into()));
        }
        if self.kind == BackendKind::Http && self.endpoint.is_none() {
            return Err(Error::Config(format!("backend `{}` needs an endpoint", self.id)));
        }
        Ok(())
    }
}

/// `k=v` pairs sorted by key, joined with `;`.
pub fn canonical_params(params: &BTreeMap<String, String>) -> String {
    params
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// SHA-256 over
/// `input_digest ‖ prompt_digest ‖ backend_id ‖ 0x00 ‖ canonical(params) ‖ 0x00 ‖ seed`,
/// digests as raw 32-byte values and the seed as 8 little-endian bytes.
pub fn cache_key(
    input_digest: Digest,
    prompt_digest: Digest,
    backend_id: &str,
    params: &BTreeMap<String, String>,
    seed: u64,
) -> Digest {
    let canonical = canonical_params(params);
    Digest::of_parts([
        &input_digest.as_bytes()[..],
        prompt_digest.as_bytes(),
        backend_id.as_bytes(),
        &[0],
        canonical.as_bytes(),
        &[0],
        &seed.to_le_bytes(),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobStatus {
    Pending,
    Cached,
    Generated,
    Failed,
}

/// One request to turn a target image into its pseudo-source counterpart.
#[derive(Debug, Clone)]
pub struct GenerationJob {
    pub input: ImageRecord,
    pub prompt: Arc<SourcePrompt>,
    pub backend: BackendRef,
    pub seed: u64,
    cache_key: Digest,
    pub status: JobStatus,
}

impl GenerationJob {
    pub fn new(
        input: ImageRecord,
        prompt: Arc<SourcePrompt>,
        backend: BackendRef,
        seed: u64,
    ) -> Self {
        let cache_key = cache_key(
            input.digest(),
            prompt.digest(),
            &backend.id,
            &backend.params,
            seed,
        );
        GenerationJob {
            input,
            prompt,
            backend,
            seed,
            cache_key,
            status: JobStatus::Pending,
        }
    }

    pub fn cache_key(&self) -> Digest {
        self.cache_key
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            cache_key: self.cache_key,
            source_digest: self.input.digest(),
            backend: self.backend.id.clone(),
            seed: self.seed,
        }
    }
}

/// Raw outcome of a backend call, recorded alongside the cached image.
#[derive(Debug, Clone)]
pub struct GenerationRecord {
    pub latency_ms: u128,
    pub seed: u64,
    pub meta: BTreeMap<String, String>,
}

/// Run the backend for `job`. The input record is left untouched; the result
/// is a new pseudo-source record carrying the job's provenance.
pub fn transform(
    job: &GenerationJob,
    backend: &dyn Backend,
) -> Result<(ImageRecord, GenerationRecord)> {
    let started = Instant::now();
    let out = backend.transform(&job.input, job.prompt.text(), job.seed, &job.backend.params)?;
    let latency_ms = started.elapsed().as_millis();
    let image = ImageRecord::from_bytes(
        job.input.id(),
        out.bytes,
        job.input.split(),
        ImageRole::PseudoSource,
    )
    .map_err(|e| Error::generation(&job.backend.id, format!("backend returned no usable image: {e}")))?
    .with_provenance(job.provenance());
    Ok((
        image,
        GenerationRecord {
            latency_ms,
            seed: job.seed,
            meta: out.meta,
        },
    ))
}
