use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};

use super::MetaPromptSpec;
use crate::digest::Digest;
use crate::error::{Error, Result};

const HEADER: &str = "ttm-prompt v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptProvenance {
    MllmGenerated,
    Handcrafted,
    Canned,
}

impl PromptProvenance {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptProvenance::MllmGenerated => "mllm_generated",
            PromptProvenance::Handcrafted => "handcrafted",
            PromptProvenance::Canned => "canned",
        }
    }
}

impl fmt::Display for PromptProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptProvenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mllm_generated" => Ok(PromptProvenance::MllmGenerated),
            "handcrafted" => Ok(PromptProvenance::Handcrafted),
            "canned" => Ok(PromptProvenance::Canned),
            other => Err(Error::Argument(format!("unknown prompt provenance `{other}`"))),
        }
    }
}

/// The source-domain prompt used for every image of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePrompt {
    text: String,
    provenance: PromptProvenance,
    mllm_model: Option<String>,
    meta_digest: Option<Digest>,
    created_at: DateTime<Utc>,
    /// Sampling settings sent to the language model, recorded verbatim.
    pub sampling: BTreeMap<String, String>,
}

impl SourcePrompt {
    fn new(
        text: String,
        provenance: PromptProvenance,
        mllm_model: Option<String>,
        meta_digest: Option<Digest>,
    ) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Argument("source prompt text is empty".into()));
        }
        if provenance == PromptProvenance::MllmGenerated
            && (mllm_model.is_none() || meta_digest.is_none())
        {
            return Err(Error::Argument(
                "generated prompts need both a model name and a meta-prompt digest".into(),
            ));
        }
        Ok(SourcePrompt {
            text,
            provenance,
            mllm_model,
            meta_digest,
            created_at: Utc::now(),
            sampling: BTreeMap::new(),
        })
    }

    pub fn canned(text: impl Into<String>) -> Result<Self> {
        SourcePrompt::new(text.into(), PromptProvenance::Canned, None, None)
    }

    pub fn handcrafted(text: impl Into<String>) -> Result<Self> {
        SourcePrompt::new(text.into(), PromptProvenance::Handcrafted, None, None)
    }

    pub fn mllm_generated(
        text: impl Into<String>,
        model: impl Into<String>,
        meta_digest: Digest,
    ) -> Result<Self> {
        SourcePrompt::new(
            text.into(),
            PromptProvenance::MllmGenerated,
            Some(model.into()),
            Some(meta_digest),
        )
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn provenance(&self) -> PromptProvenance {
        self.provenance
    }

    pub fn mllm_model(&self) -> Option<&str> {
        self.mllm_model.as_deref()
    }

    pub fn meta_digest(&self) -> Option<Digest> {
        self.meta_digest
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    /// Digest of the prompt text; this is what enters generation cache keys.
    pub fn digest(&self) -> Digest {
        Digest::of(self.text.as_bytes())
    }

    /// Whether this prompt was generated from `spec`. Prompts without a
    /// meta-prompt digest never match.
    pub fn matches_spec(&self, spec: &MetaPromptSpec) -> bool {
        match (self.meta_digest, spec.digest()) {
            (Some(stored), Ok(actual)) => stored == actual,
            _ => false,
        }
    }
}

fn render(p: &SourcePrompt) -> Result<String> {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    let mut field = |key: &str, value: &str| -> Result<()> {
        if value.contains(['\n', '\r']) || key.contains([':', '\n']) {
            return Err(Error::Argument(format!(
                "prompt header `{key}` cannot hold line breaks"
            )));
        }
        out.push_str(key);
        out.push_str(": ");
        out.push_str(value);
        out.push('\n');
        Ok(())
    };
    field("provenance", p.provenance.as_str())?;
    if let Some(model) = &p.mllm_model {
        field("mllm_model", model)?;
    }
    if let Some(d) = &p.meta_digest {
        field("meta_digest", &d.to_hex())?;
    }
    field(
        "created_at",
        &p.created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
    )?;
    for (k, v) in &p.sampling {
        field(&format!("sampling.{k}"), v)?;
    }
    field("text_sha256", &p.digest().to_hex())?;
    out.push('\n');
    out.push_str(&p.text);
    Ok(out)
}

/// Write a prompt record: header line, `key: value` lines, a blank line,
/// then the prompt text verbatim. The file is replaced atomically.
pub fn save_prompt(p: &SourcePrompt, path: &Path) -> Result<()> {
    let body = render(p)?;
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Error::io(format!("temp file in {}", dir.display()), e))?;
    tmp.write_all(body.as_bytes())
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(format!("renaming into {}", path.display()), e.error))?;
    Ok(())
}

pub fn load_prompt(path: &Path) -> Result<SourcePrompt> {
    let raw = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse(&raw).map_err(|reason| Error::PromptFormat {
        path: path.to_path_buf(),
        reason,
    })
}

fn parse(raw: &[u8]) -> std::result::Result<SourcePrompt, String> {
    let text = std::str::from_utf8(raw).map_err(|e| format!("not UTF-8: {e}"))?;
    let (head, body) = text
        .split_once("\n\n")
        .ok_or("missing blank line between header and prompt text")?;
    let mut lines = head.lines();
    if lines.next() != Some(HEADER) {
        return Err(format!("expected `{HEADER}` on the first line"));
    }
    let mut fields = BTreeMap::new();
    for line in lines {
        let (k, v) = line
            .split_once(": ")
            .ok_or_else(|| format!("malformed header line `{line}`"))?;
        if fields.insert(k.to_string(), v.to_string()).is_some() {
            return Err(format!("duplicate header `{k}`"));
        }
    }
    let mut take = |k: &str| fields.remove(k);
    let provenance: PromptProvenance = take("provenance")
        .ok_or("missing provenance")?
        .parse()
        .map_err(|e: Error| e.to_string())?;
    let mllm_model = take("mllm_model");
    let meta_digest = take("meta_digest")
        .map(|d| d.parse::<Digest>())
        .transpose()
        .map_err(|e| e.to_string())?;
    let created_at = DateTime::parse_from_rfc3339(&take("created_at").ok_or("missing created_at")?)
        .map_err(|e| format!("bad created_at: {e}"))?
        .with_timezone(&Utc);
    let text_digest: Digest = take("text_sha256")
        .ok_or("missing text_sha256")?
        .parse()
        .map_err(|e: Error| e.to_string())?;
    if Digest::of(body.as_bytes()) != text_digest {
        return Err("prompt text does not match text_sha256 (truncated?)".into());
    }
    let mut sampling = BTreeMap::new();
    for (k, v) in fields {
        match k.strip_prefix("sampling.") {
            Some(name) => {
                sampling.insert(name.to_string(), v);
            }
            None => return Err(format!("unknown header `{k}`")),
        }
    }
    let mut prompt = SourcePrompt::new(body.to_string(), provenance, mllm_model, meta_digest)
        .map_err(|e| e.to_string())?;
    prompt.created_at = created_at;
    prompt.sampling = sampling;
    Ok(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::DRIVING_SOURCE_PROMPT;
    use crate::task::TaskKind;

    fn generated() -> (MetaPromptSpec, SourcePrompt) {
        let spec = MetaPromptSpec::driving(TaskKind::Segmentation, "qie-2509");
        let mut p = SourcePrompt::mllm_generated(
            "Make it a sunny day.\nKeep layout.\n",
            "gpt-5",
            spec.digest().unwrap(),
        )
        .unwrap();
        p.sampling.insert("temperature".into(), "0.2".into());
        (spec, p)
    }

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompt.txt");
        let (spec, p) = generated();
        save_prompt(&p, &path).unwrap();
        let back = load_prompt(&path).unwrap();
        assert_eq!(back, p);
        assert!(back.matches_spec(&spec));
    }

    #[test]
    fn canned_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        let p = SourcePrompt::canned(DRIVING_SOURCE_PROMPT).unwrap();
        save_prompt(&p, &path).unwrap();
        assert_eq!(load_prompt(&path).unwrap(), p);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompt.txt");
        let (_, p) = generated();
        save_prompt(&p, &path).unwrap();
        let raw = std::fs::read(&path).unwrap();
        for cut in [5, 20, raw.len() - 3] {
            std::fs::write(&path, &raw[..cut]).unwrap();
            assert!(matches!(load_prompt(&path), Err(Error::PromptFormat { .. })), "cut {cut}");
        }
    }

    #[test]
    fn digest_mismatch_is_flagged() {
        let (mut spec, p) = generated();
        spec.objective = "something else".into();
        assert!(!p.matches_spec(&spec));
        let canned = SourcePrompt::canned("x").unwrap();
        assert!(!canned.matches_spec(&spec));
    }

    #[test]
    fn generated_needs_model_and_digest() {
        assert!(SourcePrompt::new("x".into(), PromptProvenance::MllmGenerated, None, None).is_err());
        assert!(SourcePrompt::canned("   ").is_err());
    }
}
