//! Content-addressed store for generated images.
//!
//! Layout: `{root}/{key[..2]}/{key}.png` holds the generated bytes and
//! `{root}/{key[..2]}/{key}.meta` the provenance as `key: value` lines. The
//! `.meta` file is written last and acts as the commit marker: an entry
//! without it is treated as absent. Both files are written to a temporary
//! name, fsynced and renamed into place, so concurrent writers of the same
//! key converge on identical contents.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use super::{canonical_params, transform, Backend, GenerationJob, JobStatus};
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::image::{ImageRecord, ImageRole, Provenance};

const META_HEADER: &str = "ttm-cache v1";

#[derive(Debug, Default)]
pub struct CacheStats {
    hits: AtomicU64,
    misses: AtomicU64,
    backend_calls: AtomicU64,
    evictions: AtomicU64,
}

impl CacheStats {
    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn evictions(&self) -> u64 {
        self.evictions.load(Ordering::Relaxed)
    }
}

/// Parsed `.meta` sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedMeta {
    pub key: Digest,
    pub input_digest: Digest,
    pub prompt_digest: Digest,
    pub backend: String,
    pub params: String,
    pub seed: u64,
    pub output_digest: Digest,
    pub width: u32,
    pub height: u32,
    pub extra: BTreeMap<String, String>,
}

impl CachedMeta {
    fn render(&self) -> String {
        let mut lines = vec![
            META_HEADER.to_string(),
            format!("key: {}", self.key),
            format!("input_digest: {}", self.input_digest),
            format!("prompt_digest: {}", self.prompt_digest),
            format!("backend: {}", self.backend),
            format!("params: {}", self.params),
            format!("seed: {}", self.seed),
            format!("output_digest: {}", self.output_digest),
            format!("width: {}", self.width),
            format!("height: {}", self.height),
        ];
        for (k, v) in &self.extra {
            let v = v.replace(['\n', '\r'], " ");
            lines.push(format!("meta.{k}: {v}"));
        }
        lines.join("\n") + "\n"
    }

    fn parse(text: &str) -> Option<CachedMeta> {
        let mut lines = text.lines();
        if lines.next()? != META_HEADER {
            return None;
        }
        let mut fields = BTreeMap::new();
        let mut extra = BTreeMap::new();
        for line in lines {
            let (k, v) = line.split_once(": ").or_else(|| line.strip_suffix(':').map(|k| (k, "")))?;
            match k.strip_prefix("meta.") {
                Some(name) => extra.insert(name.to_string(), v.to_string()),
                None => fields.insert(k.to_string(), v.to_string()),
            };
        }
        let get = |k: &str| fields.get(k).cloned();
        Some(CachedMeta {
            key: get("key")?.parse().ok()?,
            input_digest: get("input_digest")?.parse().ok()?,
            prompt_digest: get("prompt_digest")?.parse().ok()?,
            backend: get("backend")?,
            params: get("params").unwrap_or_default(),
            seed: get("seed")?.parse().ok()?,
            output_digest: get("output_digest")?.parse().ok()?,
            width: get("width")?.parse().ok()?,
            height: get("height")?.parse().ok()?,
            extra,
        })
    }
}

#[derive(Debug)]
pub struct ArtifactCache {
    root: PathBuf,
    stats: CacheStats,
}

enum Lookup {
    Hit(ImageRecord),
    Absent,
    Corrupt(String),
}

impl ArtifactCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ArtifactCache {
            root: root.into(),
            stats: CacheStats::default(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    pub fn image_path(&self, key: Digest) -> PathBuf {
        let hex = key.to_hex();
        self.root.join(&hex[..2]).join(format!("{hex}.png"))
    }

    pub fn meta_path(&self, key: Digest) -> PathBuf {
        let hex = key.to_hex();
        self.root.join(&hex[..2]).join(format!("{hex}.meta"))
    }

    /// Whether a committed entry exists. Does not verify it.
    pub fn contains(&self, key: Digest) -> bool {
        self.meta_path(key).is_file()
    }

    pub fn read_meta(&self, key: Digest) -> Option<CachedMeta> {
        let text = std::fs::read_to_string(self.meta_path(key)).ok()?;
        CachedMeta::parse(&text)
    }

    fn lookup(&self, job: &GenerationJob) -> Lookup {
        let key = job.cache_key();
        let Ok(meta_text) = std::fs::read_to_string(self.meta_path(key)) else {
            return Lookup::Absent;
        };
        let Some(meta) = CachedMeta::parse(&meta_text) else {
            return Lookup::Corrupt("unparseable meta".into());
        };
        if meta.key != key {
            return Lookup::Corrupt("meta names a different key".into());
        }
        let bytes = match std::fs::read(self.image_path(key)) {
            Ok(b) => b,
            Err(e) => return Lookup::Corrupt(format!("image unreadable: {e}")),
        };
        if Digest::of(&bytes) != meta.output_digest {
            return Lookup::Corrupt("image digest mismatch".into());
        }
        match ImageRecord::from_bytes(job.input.id(), bytes, job.input.split(), ImageRole::PseudoSource) {
            Ok(img) => Lookup::Hit(img.with_provenance(Provenance {
                cache_key: key,
                source_digest: job.input.digest(),
                backend: job.backend.id.clone(),
                seed: job.seed,
            })),
            Err(e) => Lookup::Corrupt(e.to_string()),
        }
    }

    fn evict(&self, key: Digest) {
        let _ = std::fs::remove_file(self.meta_path(key));
        let _ = std::fs::remove_file(self.image_path(key));
        self.stats.evictions.fetch_add(1, Ordering::Relaxed);
    }

    /// Return the cached pseudo-source image for `job`, generating and
    /// storing it on a miss. A corrupt entry is evicted and regenerated once.
    pub fn get_or_generate(&self, job: &mut GenerationJob, backend: &dyn Backend) -> Result<ImageRecord> {
        match self.lookup(job) {
            Lookup::Hit(img) => {
                self.stats.hits.fetch_add(1, Ordering::Relaxed);
                job.status = JobStatus::Cached;
                return Ok(img);
            }
            Lookup::Corrupt(reason) => {
                log::warn!("cache entry {} is corrupt ({reason}); regenerating", job.cache_key());
                self.evict(job.cache_key());
            }
            Lookup::Absent => {}
        }
        self.stats.misses.fetch_add(1, Ordering::Relaxed);
        self.stats.backend_calls.fetch_add(1, Ordering::Relaxed);
        let (image, record) = match transform(job, backend) {
            Ok(out) => out,
            Err(e) => {
                job.status = JobStatus::Failed;
                return Err(e);
            }
        };
        let mut extra = record.meta;
        extra.insert("latency_ms".into(), record.latency_ms.to_string());
        let meta = CachedMeta {
            key: job.cache_key(),
            input_digest: job.input.digest(),
            prompt_digest: job.prompt.digest(),
            backend: job.backend.id.clone(),
            params: canonical_params(&job.backend.params),
            seed: job.seed,
            output_digest: image.digest(),
            width: image.width(),
            height: image.height(),
            extra,
        };
        self.store(job.cache_key(), image.bytes(), &meta)?;
        job.status = JobStatus::Generated;
        Ok(image)
    }

    fn store(&self, key: Digest, bytes: &[u8], meta: &CachedMeta) -> Result<()> {
        let image_path = self.image_path(key);
        let dir = image_path.parent().expect("cache paths have a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        write_atomic(&image_path, bytes)?;
        write_atomic(&self.meta_path(key), meta.render().as_bytes())
    }
}

/// Write to a sibling temp file, fsync, then rename over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Error::io(format!("temp file in {}", dir.display()), e))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(format!("renaming into {}", path.display()), e.error))?;
    Ok(())
}
