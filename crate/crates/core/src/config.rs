//! Experiment configuration files.
//!
//! ```text
//! ttm-config v1
//! # comments start with '#'
//! [experiment]
//! manifest = data/manifest.txt
//! seeds = 0, 1, 2
//! max_inflight = 4
//! cache_root = cache
//! output_dir = out
//!
//! [prompt]
//! source = canned
//!
//! [fusion]
//! weight_ps = 0.5
//!
//! [backend.qie-2509]
//! kind = http
//! endpoint = https://i2i.example.com
//! label = QIE-2509
//! param.steps = 8
//!
//! [service.deeplab]
//! kind = http
//! endpoint = http://localhost:8000
//! classes = 19
//! ```
//!
//! The first line must be the version header. Sections are `[name]` or
//! `[kind.id]`; entries are `key = value`. Relative paths resolve against the
//! config file's directory. See [`ExperimentConfig`] for every key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::fusion::{FusionMode, FusionPolicy};
use crate::generation::{BackendKind, BackendRef, SeedPolicy};
use crate::inference::OutputConvention;
use crate::retry::RetryPolicy;
use crate::task::TaskKind;

pub const CONFIG_HEADER: &str = "ttm-config v1";

/// Where the source-domain prompt comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptSource {
    /// The built-in driving-scene prompt.
    Canned,
    /// A stored prompt record.
    File(PathBuf),
    /// Generated once per run from the meta-prompt by a multimodal model.
    Mllm {
        id: String,
        endpoint: String,
        model: String,
        multimodal: bool,
        max_tokens: u32,
        /// Source-domain example images attached to the meta-prompt.
        examples: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServiceKind {
    /// In-process colour-keyed model with this many classes.
    HueOracle,
    Http,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub id: String,
    /// Column heading in reports; defaults to the id.
    pub label: String,
    pub kind: ServiceKind,
    pub endpoint: Option<String>,
    pub classes: Option<usize>,
    pub output: OutputConvention,
    pub renormalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub backend: BackendRef,
    /// Row heading in reports; defaults to the id.
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    JsonLines,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub path: PathBuf,
    /// SHA-256 of the config file.
    pub digest: Digest,
    pub manifest: PathBuf,
    /// Overrides the manifest's task when set; must agree with it.
    pub task: Option<TaskKind>,
    pub backends: Vec<BackendConfig>,
    pub services: Vec<ServiceConfig>,
    /// Weight and mode for TTM rows; `base_only` runs no generation at all.
    pub fusion: FusionPolicyConfig,
    pub seeds: Vec<u64>,
    pub prompt: PromptSource,
    pub max_inflight: usize,
    pub cache_root: PathBuf,
    pub output_dir: PathBuf,
    /// Largest tolerated fraction of failed images.
    pub failure_threshold: f64,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    pub formats: Vec<ReportFormat>,
    pub svg: bool,
}

/// Fusion settings before the task is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionPolicyConfig {
    pub weight_ps: f32,
    pub mode: Option<FusionMode>,
}

impl FusionPolicyConfig {
    pub fn resolve(&self, task: TaskKind) -> Result<FusionPolicy> {
        let mut policy = FusionPolicy::for_task(task);
        policy.weight_ps = self.weight_ps;
        if let Some(mode) = self.mode {
            policy.mode = mode;
        }
        policy.validate()?;
        Ok(policy)
    }
}

type Sections = Vec<(String, BTreeMap<String, String>)>;

fn parse_sections(text: &str) -> Result<Sections> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim_end() == CONFIG_HEADER => {}
        _ => return Err(Error::Config(format!("first line must be `{CONFIG_HEADER}`"))),
    }
    let mut sections: Sections = Vec::new();
    for (n, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            if sections.iter().any(|(s, _)| *s == name) {
                return Err(Error::Config(format!("line {}: section [{name}] repeated", n + 1)));
            }
            sections.push((name, BTreeMap::new()));
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (_, entries) = sections
            .last_mut()
            .ok_or_else(|| Error::Config(format!("line {}: entry outside a section", n + 1)))?;
        if entries.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: key `{}` repeated", n + 1, k.trim())));
        }
    }
    Ok(sections)
}

struct Section<'a> {
    name: &'a str,
    entries: BTreeMap<String, String>,
}

impl Section<'_> {
    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| Error::Config(format!("[{}] needs `{key}`", self.name)))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("[{}] `{key}` has invalid value `{v}`", self.name))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(Error::Config(format!("[{}] unknown key `{k}`", self.name))),
            None => Ok(()),
        }
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parse_bool(section: &str, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("[{section}] `{key}` expects true or false, got `{v}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("[{section}] `{key}` has invalid item `{s}`")))
        })
        .collect()
}

/// Seeds as a comma list, or a half-open range `a..b`.
fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = v.split_once("..") {
        let bad = || Error::Config(format!("[experiment] bad seed range `{v}`"));
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..b).collect());
    }
    parse_list("experiment", "seeds", v)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut config = ExperimentConfig::parse(&text, base)?;
        config.path = path.to_path_buf();
        config.digest = Digest::of(&bytes);
        Ok(config)
    }

    /// Parse config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut experiment = None;
        let mut prompt = None;
        let mut fusion = None;
        let mut report = None;
        let mut backends = Vec::new();
        let mut services = Vec::new();
        let sections = parse_sections(text)?;
        for (name, entries) in &sections {
            let section = Section {
                name,
                entries: entries.clone(),
            };
            match name.split_once('.') {
                None if name == "experiment" => experiment = Some(section),
                None if name == "prompt" => prompt = Some(section),
                None if name == "fusion" => fusion = Some(section),
                None if name == "report" => report = Some(section),
                Some(("backend", id)) if !id.is_empty() => backends.push(parse_backend(id, section)?),
                Some(("service", id)) if !id.is_empty() => services.push(parse_service(id, section, base)?),
                _ => return Err(Error::Config(format!("unknown section [{name}]"))),
            }
        }

        let mut ex = experiment.ok_or_else(|| Error::Config("missing [experiment] section".into()))?;
        let manifest = resolve(base, &ex.require("manifest")?);
        let task = ex.parse::<TaskKind>("task")?;
        let seeds = match ex.take("seeds") {
            Some(v) => parse_seeds(&v)?,
            None => vec![0],
        };
        let max_inflight = ex.parse::<usize>("max_inflight")?.unwrap_or(4);
        let cache_root = resolve(base, &ex.take("cache_root").unwrap_or_else(|| "cache".into()));
        let output_dir = resolve(base, &ex.take("output_dir").unwrap_or_else(|| "out".into()));
        let failure_threshold = ex.parse::<f64>("failure_threshold")?.unwrap_or(0.01);
        let retry = RetryPolicy {
            max_attempts: ex.parse::<u32>("retries")?.unwrap_or(3),
            base_delay: Duration::from_secs_f64(ex.parse::<f64>("retry_base_secs")?.unwrap_or(1.0)),
            max_delay: Duration::from_secs_f64(ex.parse::<f64>("retry_max_secs")?.unwrap_or(60.0)),
        };
        let timeout = Duration::from_secs_f64(ex.parse::<f64>("timeout_secs")?.unwrap_or(120.0));
        ex.finish()?;

        let prompt = match prompt {
            None => PromptSource::Canned,
            Some(mut p) => {
                let source = p.take("source").unwrap_or_else(|| "canned".into());
                let out = match source.as_str() {
                    "canned" => PromptSource::Canned,
                    "file" => PromptSource::File(resolve(base, &p.require("file")?)),
                    "mllm" => {
                        let multimodal = match p.take("multimodal") {
                            Some(v) => parse_bool("prompt", "multimodal", &v)?,
                            None => true,
                        };
                        let examples = match p.take("examples") {
                            Some(v) => v
                                .split(',')
                                .map(str::trim)
                                .filter(|s| !s.is_empty())
                                .map(|s| resolve(base, s))
                                .collect(),
                            None => Vec::new(),
                        };
                        PromptSource::Mllm {
                            id: p.take("id").unwrap_or_else(|| "mllm".into()),
                            endpoint: p.require("endpoint")?,
                            model: p.require("model")?,
                            multimodal,
                            max_tokens: p.parse::<u32>("max_tokens")?.unwrap_or(1024),
                            examples,
                        }
                    }
                    other => return Err(Error::Config(format!("[prompt] unknown source `{other}`"))),
                };
                p.finish()?;
                out
            }
        };

        let fusion = match fusion {
            None => FusionPolicyConfig {
                weight_ps: 0.5,
                mode: None,
            },
            Some(mut f) => {
                let out = FusionPolicyConfig {
                    weight_ps: f.parse::<f32>("weight_ps")?.unwrap_or(0.5),
                    mode: f.parse::<FusionMode>("mode")?,
                };
                f.finish()?;
                out
            }
        };
        if !(0.0..=1.0).contains(&fusion.weight_ps) {
            return Err(Error::Config(format!("[fusion] weight_ps {} outside [0,1]", fusion.weight_ps)));
        }

        let (formats, svg) = match report {
            None => (vec![ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::JsonLines], false),
            Some(mut r) => {
                let formats = match r.take("formats") {
                    None => vec![ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::JsonLines],
                    Some(v) => v
                        .split(',')
                        .map(str::trim)
                        .map(|f| match f {
                            "markdown" => Ok(ReportFormat::Markdown),
                            "csv" => Ok(ReportFormat::Csv),
                            "jsonl" | "json-lines" => Ok(ReportFormat::JsonLines),
                            other => Err(Error::Config(format!("[report] unknown format `{other}`"))),
                        })
                        .collect::<Result<_>>()?,
                };
                let svg = match r.take("svg") {
                    Some(v) => parse_bool("report", "svg", &v)?,
                    None => false,
                };
                r.finish()?;
                (formats, svg)
            }
        };

        let config = ExperimentConfig {
            path: PathBuf::new(),
            digest: Digest::of(text.as_bytes()),
            manifest,
            task,
            backends,
            services,
            fusion,
            seeds,
            prompt,
            max_inflight,
            cache_root,
            output_dir,
            failure_threshold,
            retry,
            timeout,
            formats,
            svg,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.services.is_empty() {
            return Err(Error::Config("at least one [service.<id>] is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        if self.backends.is_empty() && self.fusion.mode != Some(FusionMode::BaseOnly) {
            return Err(Error::Config(
                "at least one [backend.<id>] is required unless [fusion] mode = base_only".into(),
            ));
        }
        if self.max_inflight == 0 {
            return Err(Error::Config("`max_inflight` must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return Err(Error::Config("`failure_threshold` must lie in [0,1]".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(Error::Config("`retries` must be at least 1".into()));
        }
        Ok(())
    }
}

fn parse_backend(id: &str, mut s: Section<'_>) -> Result<BackendConfig> {
    let kind: BackendKind = s
        .require("kind")?
        .parse()
        .map_err(|e: Error| Error::Config(format!("[backend.{id}] {e}")))?;
    let mut backend = BackendRef::mock(id, kind);
    backend.endpoint = s.take("endpoint");
    if let Some(p) = s.parse::<SeedPolicy>("seed_policy")? {
        backend.seed_policy = p;
    }
    let label = s.take("label").unwrap_or_else(|| id.to_string());
    let params: Vec<String> = s.entries.keys().filter(|k| k.starts_with("param.")).cloned().collect();
    for k in params {
        let v = s.take(&k).expect("key listed");
        backend.params.insert(k["param.".len()..].to_string(), v);
    }
    s.finish()?;
    backend
        .validate()
        .map_err(|e| Error::Config(format!("[backend.{id}] {e}")))?;
    Ok(BackendConfig { backend, label })
}

fn parse_service(id: &str, mut s: Section<'_>, _base: &Path) -> Result<ServiceConfig> {
    let kind = match s.require("kind")?.as_str() {
        "hue-oracle" => ServiceKind::HueOracle,
        "http" => ServiceKind::Http,
        other => return Err(Error::Config(format!("[service.{id}] unknown kind `{other}`"))),
    };
    let endpoint = s.take("endpoint");
    let classes = s.parse::<usize>("classes")?;
    let output = s.parse::<OutputConvention>("output")?.unwrap_or_default();
    let renormalize = match s.take("renormalize") {
        Some(v) => parse_bool(s.name, "renormalize", &v)?,
        None => false,
    };
    let label = s.take("label").unwrap_or_else(|| id.to_string());
    s.finish()?;
    match kind {
        ServiceKind::Http if endpoint.is_none() => {
            return Err(Error::Config(format!("[service.{id}] kind = http needs `endpoint`")))
        }
        ServiceKind::HueOracle if classes.is_none() => {
            return Err(Error::Config(format!("[service.{id}] kind = hue-oracle needs `classes`")))
        }
        _ => {}
    }
    Ok(ServiceConfig {
        id: id.to_string(),
        label,
        kind,
        endpoint,
        classes,
        output,
        renormalize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "ttm-config v1
# mock run
[experiment]
manifest = data/manifest.txt
seeds = 0..3
max_inflight = 2

[backend.inv]
kind = mock-invert
label = Invert
param.steps = 8

[service.oracle]
kind = hue-oracle
classes = 7
label = Oracle
";

    #[test]
    fn parses_sample() {
        let c = ExperimentConfig::parse(SAMPLE, Path::new("/cfg")).unwrap();
        assert_eq!(c.manifest, PathBuf::from("/cfg/data/manifest.txt"));
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.max_inflight, 2);
        assert_eq!(c.cache_root, PathBuf::from("/cfg/cache"));
        assert_eq!(c.backends[0].backend.kind, BackendKind::MockInvert);
        assert_eq!(c.backends[0].backend.params["steps"], "8");
        assert_eq!(c.backends[0].label, "Invert");
        assert_eq!(c.services[0].classes, Some(7));
        assert_eq!(c.prompt, PromptSource::Canned);
        assert_eq!(c.failure_threshold, 0.01);
        let policy = c.fusion.resolve(TaskKind::Segmentation).unwrap();
        assert_eq!((policy.mode, policy.weight_ps), (FusionMode::FuseProbs, 0.5));
    }

    #[test]
    fn errors() {
        let cases = [
            "ttm-config v2\n",
            "ttm-config v1\n[experiment]\nseeds = 1\n",
            "ttm-config v1\nmanifest = x\n",
            &SAMPLE.replace("max_inflight = 2", "max_inflight = 2\nbogus = 1"),
            &SAMPLE.replace("[service.oracle]\nkind = hue-oracle\nclasses = 7\nlabel = Oracle\n", ""),
            &SAMPLE.replace("seeds = 0..3", "seeds = "),
            &SAMPLE.replace("kind = mock-invert", "kind = http"),
            &(SAMPLE.to_string() + "[fusion]\nweight_ps = 1.5\n"),
        ];
        for c in cases {
            assert!(matches!(ExperimentConfig::parse(c, Path::new(".")), Err(Error::Config(_))), "{c}");
        }
    }

    #[test]
    fn base_only_needs_no_backend() {
        let text = "ttm-config v1\n[experiment]\nmanifest = m\n[fusion]\nmode = base_only\n[service.s]\nkind = hue-oracle\nclasses = 3\n";
        assert!(ExperimentConfig::parse(text, Path::new(".")).is_ok());
    }
}
