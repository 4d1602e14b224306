//! Experiment orchestration.
//!
//! For every manifest entry the runner predicts on the original image once
//! per service, then for each backend and seed fetches (or generates) the
//! pseudo-source image, aligns it, predicts again, selects or fuses the
//! output and scores it. Images are processed on a bounded worker pool;
//! each worker returns an immutable per-image result and the accumulators
//! are merged afterwards in manifest order, so reports do not depend on
//! scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use crate::config::{ExperimentConfig, PromptSource, ServiceKind};
use crate::datasets::{load_manifest, DatasetManifest, GroundTruth, ManifestEntry};
use crate::error::{Error, Result};
use crate::fusion::{argmax_map, select_output, FusionMode, FusionPolicy};
use crate::generation::{
    align_to_original, build_backend, write_atomic, ArtifactCache, Backend, BackendRef, GenerationJob,
};
use crate::image::{ImageRecord, ImageRole};
use crate::inference::{
    predict, check_pair_alignment, ClassMask, HttpPredictionService, HueOracle, Prediction, PredictionService,
};
use crate::metrics::{map50, miou, top1, AccuracyCounter, ConfusionMatrix, DetectionAccumulator, IOU_THRESHOLD};
use crate::prompting::{
    generate_source_prompt, load_prompt, save_prompt, HttpMllmClient, MetaPromptSpec, SourcePrompt,
    DRIVING_SOURCE_PROMPT,
};
use crate::report::{method_label, write_report, Cell, ClassValue, MethodKind, RunReport, BASE_METHOD};
use crate::task::TaskKind;

pub const PROMPT_FILE: &str = "prompt.txt";
pub const FAILURES_FILE: &str = "failures.tsv";
pub const RUN_LOG_FILE: &str = "run.log";
pub const ARTIFACTS_DIR: &str = "artifacts";

pub struct ServiceHandle {
    pub id: String,
    pub label: String,
    pub service: Arc<dyn PredictionService>,
}

pub struct BackendHandle {
    pub backend_ref: BackendRef,
    pub label: String,
    pub backend: Arc<dyn Backend>,
}

/// A loaded experiment: manifest, resolved policies and live clients.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub manifest: DatasetManifest,
    pub task: TaskKind,
    pub policy: FusionPolicy,
    pub services: Vec<ServiceHandle>,
    pub backends: Vec<BackendHandle>,
    pub cache: ArtifactCache,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Persist every scored prediction under `output_dir/artifacts`.
    pub keep_artifacts: bool,
}

/// One image that could not be evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFailure {
    pub image: String,
    pub stage: &'static str,
    pub reason: String,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub failures: Vec<ImageFailure>,
    pub evaluated: usize,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub backend_calls: u64,
}

/// Result of generating pseudo-source images without evaluating them.
#[derive(Debug)]
pub struct TransformOutcome {
    pub jobs: usize,
    pub cache_hits: u64,
    pub backend_calls: u64,
    pub failures: Vec<ImageFailure>,
}

/// Work a run would do, computed without contacting any service.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkPlan {
    pub dataset: String,
    pub task: TaskKind,
    pub images: usize,
    pub services: Vec<String>,
    pub backends: Vec<String>,
    pub seeds: Vec<u64>,
    pub fusion: String,
    pub generation_jobs: usize,
    /// Jobs already in the cache; `None` when the prompt is not known yet.
    pub cached_jobs: Option<usize>,
    pub predictions: usize,
    pub output_dir: PathBuf,
}

impl fmt::Display for WorkPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dataset: {} ({}, {} images)", self.dataset, self.task, self.images)?;
        writeln!(f, "services: {}", self.services.join(", "))?;
        writeln!(f, "backends: {}", if self.backends.is_empty() { "none".into() } else { self.backends.join(", ") })?;
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        writeln!(f, "seeds: {}", seeds.join(", "))?;
        writeln!(f, "fusion: {}", self.fusion)?;
        match self.cached_jobs {
            Some(c) => writeln!(f, "generation jobs: {} ({} cached)", self.generation_jobs, c)?,
            None => writeln!(f, "generation jobs: {} (prompt not generated yet)", self.generation_jobs)?,
        }
        writeln!(f, "prediction calls: {}", self.predictions)?;
        writeln!(f, "output: {}", self.output_dir.display())
    }
}

fn stage_of(e: &Error) -> &'static str {
    match e {
        Error::Generation { .. } => "generation",
        Error::Alignment(_) => "alignment",
        Error::Protocol { .. } | Error::Inference { .. } => "inference",
        Error::Fusion(_) => "fusion",
        Error::Metric(_) => "metric",
        _ => "load",
    }
}

#[derive(Debug, Clone)]
enum Accumulator {
    Segmentation(ConfusionMatrix),
    Detection(DetectionAccumulator),
    Classification(AccuracyCounter),
}

impl Accumulator {
    fn new(task: TaskKind, classes: usize) -> Self {
        match task {
            TaskKind::Segmentation => Accumulator::Segmentation(ConfusionMatrix::new(classes)),
            TaskKind::Detection => Accumulator::Detection(DetectionAccumulator::new(IOU_THRESHOLD)),
            TaskKind::Classification => Accumulator::Classification(AccuracyCounter::default()),
        }
    }

    fn add(&mut self, index: u64, pred: &Prediction, truth: &GroundTruth, mask: Option<&ClassMask>) -> Result<()> {
        match (self, pred, truth) {
            (Accumulator::Segmentation(cm), Prediction::Segmentation(p), GroundTruth::Segmentation(gt)) => {
                cm.accumulate(&argmax_map(p), gt)
            }
            (Accumulator::Detection(acc), Prediction::Detection(d), GroundTruth::Detection(gt)) => {
                acc.add_image(index, d, gt);
                Ok(())
            }
            (Accumulator::Classification(c), Prediction::Classification(p), GroundTruth::Classification(gt)) => {
                c.add(top1(p, *gt, mask)?);
                Ok(())
            }
            _ => Err(Error::Metric("prediction, ground truth and task disagree".into())),
        }
    }

    fn merge(&mut self, other: Accumulator) -> Result<()> {
        match (self, other) {
            (Accumulator::Segmentation(a), Accumulator::Segmentation(b)) => a.merge(&b),
            (Accumulator::Detection(a), Accumulator::Detection(b)) => {
                a.merge(b);
                Ok(())
            }
            (Accumulator::Classification(a), Accumulator::Classification(b)) => {
                a.merge(b);
                Ok(())
            }
            _ => Err(Error::Metric("merging accumulators of different tasks".into())),
        }
    }

    /// Headline value in percent, plus per-class detail for detection.
    fn value(&self, manifest: &DatasetManifest) -> Result<(f64, Vec<ClassValue>)> {
        match self {
            Accumulator::Segmentation(cm) => Ok((miou(cm)?.mean, Vec::new())),
            Accumulator::Detection(acc) => {
                let ap: BTreeMap<u32, f64> = acc.per_class_ap().into_iter().map(|(c, v)| (c, 100.0 * v)).collect();
                let detail = manifest
                    .roster
                    .iter()
                    .map(|&c| ClassValue {
                        class: manifest.class_names[c as usize].clone(),
                        value: ap.get(&c).copied().unwrap_or(0.0),
                    })
                    .collect();
                Ok((map50(&ap, &manifest.roster)?, detail))
            }
            Accumulator::Classification(c) => Ok((c.accuracy()?, Vec::new())),
        }
    }
}

/// (service index, backend index or base, seed or base)
type CellKey = (usize, Option<usize>, Option<u64>);

impl Experiment {
    /// Load the manifest and build clients. Contacts nothing.
    pub fn from_config(config: ExperimentConfig) -> Result<Self> {
        let manifest = load_manifest(&config.manifest).map_err(|e| Error::Config(e.to_string()))?;
        let task = match config.task {
            Some(t) if t != manifest.task => {
                return Err(Error::Config(format!(
                    "config task {t} disagrees with manifest task {}",
                    manifest.task
                )))
            }
            _ => manifest.task,
        };
        let policy = config.fusion.resolve(task)?;
        let services = config
            .services
            .iter()
            .map(|s| {
                let service: Arc<dyn PredictionService> = match s.kind {
                    ServiceKind::HueOracle => Arc::new(HueOracle::new(&s.id, s.classes.expect("validated"))),
                    ServiceKind::Http => {
                        let mut h = HttpPredictionService::new(
                            &s.id,
                            s.endpoint.as_deref().expect("validated"),
                            config.retry.clone(),
                            config.timeout,
                        )
                        .with_output(s.output)
                        .with_renormalize(s.renormalize);
                        if let Some(c) = s.classes {
                            h = h.with_classes(c);
                        }
                        Arc::new(h)
                    }
                };
                ServiceHandle {
                    id: s.id.clone(),
                    label: s.label.clone(),
                    service,
                }
            })
            .collect();
        let backends = config
            .backends
            .iter()
            .map(|b| {
                Ok(BackendHandle {
                    backend_ref: b.backend.clone(),
                    label: b.label.clone(),
                    backend: build_backend(&b.backend, &config.retry, config.timeout)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cache = ArtifactCache::new(&config.cache_root);
        Ok(Experiment {
            config,
            manifest,
            task,
            policy,
            services,
            backends,
            cache,
        })
    }

    fn generates(&self) -> bool {
        self.policy.mode != FusionMode::BaseOnly && !self.backends.is_empty()
    }

    /// The prompt stored from an earlier run, or the one configured, if it
    /// can be known without contacting a model.
    pub fn known_prompt(&self) -> Result<Option<SourcePrompt>> {
        let stored = self.config.output_dir.join(PROMPT_FILE);
        match &self.config.prompt {
            PromptSource::Canned => SourcePrompt::canned(DRIVING_SOURCE_PROMPT).map(Some),
            PromptSource::File(path) => load_prompt(path).map(Some),
            PromptSource::Mllm { .. } => {
                let spec = self.meta_prompt_spec()?;
                Ok(load_prompt(&stored).ok().filter(|p| p.matches_spec(&spec)))
            }
        }
    }

    pub fn meta_prompt_spec(&self) -> Result<MetaPromptSpec> {
        let i2i = self.backends.first().map(|b| b.label.as_str()).unwrap_or("image editor");
        let mut spec = MetaPromptSpec::driving(self.task, i2i);
        if let PromptSource::Mllm { examples, .. } = &self.config.prompt {
            spec.example_images = examples
                .iter()
                .map(|p| ImageRecord::load(p, p.display().to_string(), "examples", ImageRole::Source))
                .collect::<Result<_>>()?;
        }
        Ok(spec)
    }

    /// The source prompt for this run, generating it through the configured
    /// multimodal model if no matching prompt is stored in the output
    /// directory. The prompt is written to `output_dir/prompt.txt`.
    pub fn resolve_prompt(&self) -> Result<Arc<SourcePrompt>> {
        let stored = self.config.output_dir.join(PROMPT_FILE);
        let prompt = match self.known_prompt()? {
            Some(p) => p,
            None => {
                let PromptSource::Mllm {
                    id,
                    endpoint,
                    model,
                    multimodal,
                    max_tokens,
                    ..
                } = &self.config.prompt
                else {
                    unreachable!("canned and file prompts are always known")
                };
                let client = HttpMllmClient::new(id, endpoint, model, *multimodal, self.config.timeout);
                generate_source_prompt(
                    &self.meta_prompt_spec()?,
                    &client,
                    &self.config.retry,
                    *max_tokens,
                    &BTreeMap::new(),
                )?
            }
        };
        let unchanged = load_prompt(&stored).is_ok_and(|p| p.text() == prompt.text());
        if !unchanged {
            std::fs::create_dir_all(&self.config.output_dir)
                .map_err(|e| Error::io(format!("creating {}", self.config.output_dir.display()), e))?;
            save_prompt(&prompt, &stored)?;
        }
        Ok(Arc::new(load_prompt(&stored).unwrap_or(prompt)))
    }

    /// Count the work without calling any backend or service.
    pub fn plan(&self) -> Result<WorkPlan> {
        let n = self.manifest.len();
        let methods = if self.generates() { self.backends.len() * self.config.seeds.len() } else { 0 };
        let cached_jobs = match self.known_prompt()? {
            Some(prompt) if self.generates() => {
                let prompt = Arc::new(prompt);
                let mut cached = 0;
                for entry in &self.manifest.entries {
                    let image = ImageRecord::load(&entry.image, &entry.id, &self.manifest.name, ImageRole::Target)?;
                    for b in &self.backends {
                        for &seed in &self.config.seeds {
                            let job = self.job(&image, &prompt, b, seed);
                            cached += usize::from(self.cache.contains(job.cache_key()));
                        }
                    }
                }
                Some(cached)
            }
            Some(_) => Some(0),
            None => None,
        };
        Ok(WorkPlan {
            dataset: self.manifest.name.clone(),
            task: self.task,
            images: n,
            services: self.services.iter().map(|s| s.id.clone()).collect(),
            backends: if self.generates() {
                self.backends.iter().map(|b| format!("{} ({})", b.backend_ref.id, b.backend_ref.kind.as_str())).collect()
            } else {
                Vec::new()
            },
            seeds: self.config.seeds.clone(),
            fusion: format!("{} (weight_ps {})", self.policy.mode, self.policy.weight_ps),
            generation_jobs: n * methods,
            cached_jobs,
            predictions: n * self.services.len() * (1 + methods),
            output_dir: self.config.output_dir.clone(),
        })
    }

    /// Fill the cache with every pseudo-source image the run needs.
    pub fn transform(&self, prompt: &Arc<SourcePrompt>) -> Result<TransformOutcome> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.max_inflight)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let work: Vec<(usize, usize, u64)> = if self.generates() {
            (0..self.manifest.len())
                .flat_map(|i| {
                    (0..self.backends.len()).flat_map(move |b| self.config.seeds.iter().map(move |&s| (i, b, s)))
                })
                .collect()
        } else {
            Vec::new()
        };
        let failures: Vec<ImageFailure> = pool.install(|| {
            work.par_iter()
                .filter_map(|&(i, bi, seed)| {
                    let entry = &self.manifest.entries[i];
                    let b = &self.backends[bi];
                    let r = ImageRecord::load(&entry.image, &entry.id, &self.manifest.name, ImageRole::Target)
                        .and_then(|image| {
                            let mut job = self.job(&image, prompt, b, seed);
                            self.cache.get_or_generate(&mut job, b.backend.as_ref())
                        });
                    r.err().map(|e| ImageFailure {
                        image: entry.id.clone(),
                        stage: stage_of(&e),
                        reason: e.to_string(),
                    })
                })
                .collect()
        });
        let stats = self.cache.stats();
        Ok(TransformOutcome {
            jobs: work.len(),
            cache_hits: stats.hits(),
            backend_calls: stats.backend_calls(),
            failures,
        })
    }

    fn job(&self, image: &ImageRecord, prompt: &Arc<SourcePrompt>, b: &BackendHandle, run_seed: u64) -> GenerationJob {
        let seed = b.backend_ref.seed_policy.resolve(run_seed, image.digest());
        GenerationJob::new(image.clone(), Arc::clone(prompt), b.backend_ref.clone(), seed)
    }

    fn classes(&self) -> usize {
        self.manifest.classes()
    }

    fn evaluate_image(
        &self,
        index: usize,
        entry: &ManifestEntry,
        prompt: &Arc<SourcePrompt>,
        opts: RunOptions,
    ) -> Result<Vec<(CellKey, Accumulator)>> {
        let image = ImageRecord::load(&entry.image, &entry.id, &self.manifest.name, ImageRole::Target)?;
        let truth = self.manifest.load_truth(entry)?;
        if let GroundTruth::Segmentation(gt) = &truth {
            if (gt.width() as u32, gt.height() as u32) != image.dims() {
                return Err(Error::Metric(format!(
                    "label map {}x{} vs image {}x{}",
                    gt.width(),
                    gt.height(),
                    image.width(),
                    image.height()
                )));
            }
        }
        let mask = self.manifest.class_mask.as_ref();
        let new_acc = || Accumulator::new(self.task, self.classes());
        let mut out = Vec::new();

        let bases = self
            .services
            .iter()
            .map(|s| predict(&image, self.task, s.service.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        for (si, base) in bases.iter().enumerate() {
            let mut acc = new_acc();
            acc.add(index as u64, base, &truth, mask)?;
            self.keep(opts, si, None, None, entry, base)?;
            out.push(((si, None, None), acc));
        }
        if !self.generates() {
            return Ok(out);
        }
        for (bi, b) in self.backends.iter().enumerate() {
            for &seed in &self.config.seeds {
                let mut job = self.job(&image, prompt, b, seed);
                let generated = self.cache.get_or_generate(&mut job, b.backend.as_ref())?;
                let (aligned, _) = align_to_original(&generated, image.dims())?;
                check_pair_alignment(&image, &aligned, self.task)?;
                for (si, s) in self.services.iter().enumerate() {
                    let ttm = predict(&aligned, self.task, s.service.as_ref())?;
                    let scored = select_output(&bases[si], &ttm, &self.policy)?;
                    let mut acc = new_acc();
                    acc.add(index as u64, &scored, &truth, mask)?;
                    self.keep(opts, si, Some(bi), Some(seed), entry, &scored)?;
                    out.push(((si, Some(bi), Some(seed)), acc));
                }
            }
        }
        Ok(out)
    }

    fn artifact_path(&self, si: usize, bi: Option<usize>, seed: Option<u64>, entry: &ManifestEntry) -> PathBuf {
        let method = bi.map_or("base".to_string(), |b| self.backends[b].backend_ref.id.clone());
        let seed = seed.map_or("base".to_string(), |s| format!("seed{s}"));
        let name: String = entry.id.chars().map(|c| if c == '/' || c == '\\' { '_' } else { c }).collect();
        self.config
            .output_dir
            .join(ARTIFACTS_DIR)
            .join(&self.services[si].id)
            .join(method)
            .join(seed)
            .join(name)
    }

    fn keep(
        &self,
        opts: RunOptions,
        si: usize,
        bi: Option<usize>,
        seed: Option<u64>,
        entry: &ManifestEntry,
        p: &Prediction,
    ) -> Result<()> {
        if !opts.keep_artifacts {
            return Ok(());
        }
        let path = self.artifact_path(si, bi, seed, entry);
        let (bytes, ext) = encode_prediction(p);
        let path = path.with_extension(ext);
        let dir = path.parent().expect("artifact paths have a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        write_atomic(&path, &bytes)
    }

    /// Evaluate every image and build the report. Per-image failures are
    /// collected rather than raised; images that fail are excluded from
    /// every cell so all rows cover the same images.
    pub fn run(&self, prompt: &Arc<SourcePrompt>, opts: RunOptions) -> Result<RunOutcome> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.max_inflight)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let results: Vec<Result<Vec<(CellKey, Accumulator)>, ImageFailure>> = pool.install(|| {
            self.manifest
                .entries
                .par_iter()
                .enumerate()
                .map(|(i, entry)| {
                    self.evaluate_image(i, entry, prompt, opts).map_err(|e| ImageFailure {
                        image: entry.id.clone(),
                        stage: stage_of(&e),
                        reason: e.to_string(),
                    })
                })
                .collect()
        });

        let mut merged: BTreeMap<CellKey, Accumulator> = BTreeMap::new();
        let mut failures = Vec::new();
        let mut evaluated = 0;
        for r in results {
            match r {
                Ok(parts) => {
                    evaluated += 1;
                    for (key, acc) in parts {
                        match merged.get_mut(&key) {
                            Some(m) => m.merge(acc)?,
                            None => {
                                merged.insert(key, acc);
                            }
                        }
                    }
                }
                Err(f) => {
                    log::warn!("{} failed at {}: {}", f.image, f.stage, f.reason);
                    failures.push(f);
                }
            }
        }

        let mut cells = Vec::new();
        if evaluated > 0 {
            let metric = self.task.metric_name().to_string();
            let mut push = |si: usize, bi: Option<usize>, seed: Option<u64>| -> Result<()> {
                let acc = &merged[&(si, bi, seed)];
                let (value, detail) = acc.value(&self.manifest)?;
                cells.push(Cell {
                    dataset: self.manifest.name.clone(),
                    task: self.task,
                    metric: metric.clone(),
                    model: self.services[si].label.clone(),
                    method: bi.map_or(BASE_METHOD.to_string(), |b| method_label(&self.backends[b].label)),
                    kind: if bi.is_some() { MethodKind::Ttm } else { MethodKind::Base },
                    seed,
                    value,
                    detail,
                });
                Ok(())
            };
            for si in 0..self.services.len() {
                push(si, None, None)?;
            }
            if self.generates() {
                for bi in 0..self.backends.len() {
                    for &seed in &self.config.seeds {
                        for si in 0..self.services.len() {
                            push(si, Some(bi), Some(seed))?;
                        }
                    }
                }
            }
        }
        let mut report = RunReport::from_cells(cells);
        let prov = &mut report.provenance;
        prov.insert("config_sha256".into(), self.config.digest.to_hex());
        prov.insert("manifest_sha256".into(), self.manifest.digest.to_hex());
        prov.insert("prompt_sha256".into(), prompt.digest().to_hex());
        prov.insert("prompt_provenance".into(), prompt.provenance().as_str().into());
        prov.insert("images_listed".into(), self.manifest.len().to_string());
        prov.insert("images_evaluated".into(), evaluated.to_string());
        prov.insert("images_failed".into(), failures.len().to_string());
        prov.insert("fusion_mode".into(), self.policy.mode.to_string());
        prov.insert("fusion_weight_ps".into(), self.policy.weight_ps.to_string());
        prov.insert("std".into(), "sample (n-1)".into());
        prov.insert("miou_mean".into(), "over classes with nonzero union".into());
        prov.insert("ap".into(), "all-point interpolation, greedy matching at IoU 0.5".into());
        prov.insert("argmax_ties".into(), "lowest class index".into());

        let stats = self.cache.stats();
        Ok(RunOutcome {
            report,
            failures,
            evaluated,
            cache_hits: stats.hits(),
            cache_misses: stats.misses(),
            backend_calls: stats.backend_calls(),
        })
    }

    /// Write report files, the failure ledger and the run log; then fail if
    /// too many images were dropped.
    pub fn finish(&self, outcome: &RunOutcome) -> Result<Vec<PathBuf>> {
        let dir = &self.config.output_dir;
        let mut written = Vec::new();
        if !outcome.report.cells.is_empty() {
            written = write_report(&outcome.report, dir, &self.config.formats, self.config.svg)?;
        } else {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        let mut ledger = String::from("image\tstage\treason\n");
        for f in &outcome.failures {
            ledger.push_str(&format!("{}\t{}\t{}\n", f.image, f.stage, f.reason.replace(['\t', '\n'], " ")));
        }
        let ledger_path = dir.join(FAILURES_FILE);
        write_atomic(&ledger_path, ledger.as_bytes())?;
        written.push(ledger_path);
        let log = format!(
            "cache_hits: {}\ncache_misses: {}\nbackend_calls: {}\nimages_evaluated: {}\nimages_failed: {}\n",
            outcome.cache_hits,
            outcome.cache_misses,
            outcome.backend_calls,
            outcome.evaluated,
            outcome.failures.len()
        );
        let log_path = dir.join(RUN_LOG_FILE);
        write_atomic(&log_path, log.as_bytes())?;
        written.push(log_path);

        let total = self.manifest.len();
        let failed = outcome.failures.len();
        if failed as f64 > self.config.failure_threshold * total as f64 || outcome.evaluated == 0 {
            return Err(Error::RunFailed {
                failed,
                total,
                threshold: 100.0 * self.config.failure_threshold,
            });
        }
        Ok(written)
    }
}

/// Serialized prediction and the file extension it is stored under.
pub fn encode_prediction(p: &Prediction) -> (Vec<u8>, &'static str) {
    match p {
        Prediction::Segmentation(m) => (m.to_tensor().encode(), "ttm1"),
        Prediction::Classification(c) => (
            crate::tensor::Tensor::from_f32(vec![c.len()], c.probs().to_vec())
                .expect("valid probabilities")
                .encode(),
            "ttm1",
        ),
        Prediction::Detection(d) => {
            let records: Vec<_> = d
                .detections()
                .iter()
                .map(|d| json!({"class_id": d.class_id, "score": d.score, "box": [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2]}))
                .collect();
            (serde_json::to_vec(&records).expect("json"), "json")
        }
    }
}

/// Load, run and write: the whole `eval` path.
pub fn run_experiment(config_path: &Path, opts: RunOptions) -> Result<RunOutcome> {
    let config = ExperimentConfig::load(config_path)?;
    let experiment = Experiment::from_config(config)?;
    let prompt = experiment.resolve_prompt()?;
    let outcome = experiment.run(&prompt, opts)?;
    experiment.finish(&outcome)?;
    Ok(outcome)
}
