//! Evaluation sets described by manifest files.
//!
//! A manifest is UTF-8 text: a `ttm-manifest v1` header line, `key: value`
//! lines, one blank line, then one `image<TAB>label` line per entry. Lines
//! starting with `#` are comments. Relative paths resolve against `root`,
//! which itself resolves against the manifest's directory.
//!
//! ```text
//! ttm-manifest v1
//! name: acdc-night-val
//! task: segmentation
//! root: ../data/acdc
//! classes: cityscapes
//! mapping: cityscapes
//!
//! rgb_anon/night/val/GOPR0351_frame_000159_rgb_anon.png	gt/night/val/GOPR0351_frame_000159_gt_labelIds.png
//! ```
//!
//! Header keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `name` | dataset name used in reports (required) |
//! | `task` | `segmentation`, `detection` or `classification` (required) |
//! | `root` | base directory for entries (default: the manifest's directory) |
//! | `classes` | comma-separated class names, or `cityscapes` |
//! | `classes_file` | file with one class name per line |
//! | `mapping` | raw-to-train id mapping for segmentation labels: `identity` (default), `cityscapes`, or `raw:train,...` |
//! | `roster` | detection classes averaged by mAP, comma-separated ids (default: all) |
//! | `subset` | classification only: file of the 200 synset ids kept for evaluation |
//! | `count` | expected number of entries; recorded, a mismatch is only logged |
//!
//! The label column is a label-id PNG for segmentation, a box sidecar for
//! detection, and a class index or class name for classification. A box
//! sidecar has one `class_id x1 y1 x2 y2` line per object.

mod mapping;

pub use mapping::{map_label_ids, LabelMapping, CITYSCAPES_CLASSES, CITYSCAPES_LABEL_TO_TRAIN};

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::inference::{BBox, ClassMask};
use crate::labels::LabelMap;
use crate::metrics::GroundTruthBox;
use crate::task::TaskKind;

pub const MANIFEST_HEADER: &str = "ttm-manifest v1";
pub const IMAGENET_R_CLASSES: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TruthRef {
    LabelMap(PathBuf),
    Boxes(PathBuf),
    Class(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Image path relative to the root, as written in the manifest.
    pub id: String,
    pub image: PathBuf,
    pub truth: TruthRef,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Segmentation(LabelMap),
    Detection(Vec<GroundTruthBox>),
    Classification(usize),
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub name: String,
    pub task: TaskKind,
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub mapping: LabelMapping,
    pub roster: Vec<u32>,
    pub class_mask: Option<ClassMask>,
    pub declared_count: Option<usize>,
    pub entries: Vec<ManifestEntry>,
    /// SHA-256 of the manifest file.
    pub digest: Digest,
}

impl DatasetManifest {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Read the ground truth of one entry, with label ids mapped.
    pub fn load_truth(&self, entry: &ManifestEntry) -> Result<GroundTruth> {
        match &entry.truth {
            TruthRef::LabelMap(path) => {
                let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
                let raw = LabelMap::from_png(&bytes)?;
                Ok(GroundTruth::Segmentation(map_label_ids(&raw, &self.mapping)))
            }
            TruthRef::Boxes(path) => Ok(GroundTruth::Detection(read_sidecar(path)?)),
            TruthRef::Class(c) => Ok(GroundTruth::Classification(*c)),
        }
    }
}

/// Parse and validate a manifest; entries come back sorted by image path.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = fs::read(path).map_err(|e| Error::manifest(path, format!("cannot read: {e}")))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::manifest(path, "not UTF-8"))?;
    let err = |reason: String| Error::manifest(path, reason);

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_end() == MANIFEST_HEADER => {}
        _ => return Err(err(format!("first line must be `{MANIFEST_HEADER}`"))),
    }
    let mut header: HashMap<String, String> = HashMap::new();
    for (n, line) in lines.by_ref() {
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| err(format!("line {}: expected `key: value`", n + 1)))?;
        if header.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(err(format!("line {}: duplicate key `{}`", n + 1, k.trim())));
        }
    }

    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str, base: &Path| -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let name = header.remove("name").ok_or_else(|| err("missing `name`".into()))?;
    let task: TaskKind = header
        .remove("task")
        .ok_or_else(|| err("missing `task`".into()))?
        .parse()
        .map_err(|e: Error| err(e.to_string()))?;
    let root = header.remove("root").map_or_else(|| base.to_path_buf(), |r| resolve(&r, base));

    let class_names: Vec<String> = match (header.remove("classes"), header.remove("classes_file")) {
        (Some(_), Some(_)) => return Err(err("give `classes` or `classes_file`, not both".into())),
        (Some(c), None) if c == "cityscapes" => CITYSCAPES_CLASSES.iter().map(|s| s.to_string()).collect(),
        (Some(c), None) => c.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        (None, Some(f)) => read_list(&resolve(&f, base))?,
        (None, None) => return Err(err("missing `classes` or `classes_file`".into())),
    };
    if class_names.is_empty() {
        return Err(err("empty class list".into()));
    }
    let mapping = match header.remove("mapping") {
        Some(m) => LabelMapping::parse(&m).map_err(|e| err(e.to_string()))?,
        None => LabelMapping::identity(),
    };
    let roster: Vec<u32> = match header.remove("roster") {
        Some(r) => r
            .split(',')
            .map(|s| s.trim().parse::<u32>().map_err(|_| err(format!("roster id `{s}`"))))
            .collect::<Result<_>>()?,
        None => (0..class_names.len() as u32).collect(),
    };
    if let Some(bad) = roster.iter().find(|&&c| c as usize >= class_names.len()) {
        return Err(err(format!("roster class {bad} outside {} classes", class_names.len())));
    }
    let class_mask = match header.remove("subset") {
        Some(f) => {
            let subset_path = resolve(&f, base);
            let subset = read_list(&subset_path)?;
            Some(imagenet_r_mask(&class_names, &subset).map_err(|e| match e {
                Error::Manifest { reason, .. } => Error::manifest(&subset_path, reason),
                other => other,
            })?)
        }
        None => None,
    };
    let declared_count = match header.remove("count") {
        Some(c) => Some(c.parse::<usize>().map_err(|_| err(format!("count `{c}`")))?),
        None => None,
    };
    if let Some(k) = header.keys().min() {
        return Err(err(format!("unknown key `{k}`")));
    }

    let class_index: HashMap<&str, usize> = class_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    let mut missing = Vec::new();
    for (n, line) in lines {
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (image, label) = line
            .split_once('\t')
            .ok_or_else(|| err(format!("line {}: expected `image<TAB>label`", n + 1)))?;
        if !seen.insert(image.to_string()) {
            return Err(err(format!("duplicate image `{image}`")));
        }
        let image_path = resolve(image, &root);
        if !image_path.is_file() {
            missing.push(image_path.display().to_string());
        }
        let truth = match task {
            TaskKind::Segmentation | TaskKind::Detection => {
                let p = resolve(label, &root);
                if !p.is_file() {
                    missing.push(p.display().to_string());
                }
                if task == TaskKind::Segmentation {
                    TruthRef::LabelMap(p)
                } else {
                    TruthRef::Boxes(p)
                }
            }
            TaskKind::Classification => {
                let class = match label.parse::<usize>() {
                    Ok(c) => c,
                    Err(_) => *class_index
                        .get(label)
                        .ok_or_else(|| err(format!("line {}: unknown class `{label}`", n + 1)))?,
                };
                if class >= class_names.len() {
                    return Err(err(format!("line {}: class {class} outside {}", n + 1, class_names.len())));
                }
                if class_mask.as_ref().is_some_and(|m| !m.allows(class)) {
                    return Err(err(format!("line {}: class {class} is outside the subset", n + 1)));
                }
                TruthRef::Class(class)
            }
        };
        entries.push(ManifestEntry {
            id: image.to_string(),
            image: image_path,
            truth,
        });
    }
    if !missing.is_empty() {
        return Err(err(format!("missing files: {}", missing.join(", "))));
    }
    if entries.is_empty() {
        return Err(err("no entries".into()));
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(c) = declared_count {
        if c != entries.len() {
            log::warn!("{}: declares {c} entries, lists {}", path.display(), entries.len());
        }
    }
    Ok(DatasetManifest {
        path: path.to_path_buf(),
        name,
        task,
        root,
        class_names,
        mapping,
        roster,
        class_mask,
        declared_count,
        entries,
        digest: Digest::of(&bytes),
    })
}

fn read_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::manifest(path, format!("cannot read: {e}")))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Mask admitting exactly the 200 listed synsets out of `synsets`.
pub fn imagenet_r_mask(synsets: &[String], subset: &[String]) -> Result<ClassMask> {
    let err = |reason: String| Error::manifest("synset subset", reason);
    if subset.len() != IMAGENET_R_CLASSES {
        return Err(err(format!("expected {IMAGENET_R_CLASSES} synsets, got {}", subset.len())));
    }
    let index: HashMap<&str, usize> = synsets.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut allowed = vec![false; synsets.len()];
    for s in subset {
        let i = *index.get(s.as_str()).ok_or_else(|| err(format!("unknown synset `{s}`")))?;
        if allowed[i] {
            return Err(err(format!("synset `{s}` listed twice")));
        }
        allowed[i] = true;
    }
    ClassMask::new(allowed)
}

/// Parse a detection sidecar: `class_id x1 y1 x2 y2` per line.
pub fn parse_sidecar(text: &str) -> Result<Vec<GroundTruthBox>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            let [c, x1, y1, x2, y2] = f[..] else {
                return Err(format!("line {}: expected 5 fields, got {}", n + 1, f.len()));
            };
            let class_id = c.parse::<u32>().map_err(|_| format!("line {}: class `{c}`", n + 1))?;
            let coord = |v: &str| v.parse::<f32>().map_err(|_| format!("line {}: coordinate `{v}`", n + 1));
            let bbox = BBox::new(coord(x1)?, coord(y1)?, coord(x2)?, coord(y2)?)
                .map_err(|e| format!("line {}: {e}", n + 1))?;
            Ok(GroundTruthBox { class_id, bbox })
        })
        .collect()
}

pub fn render_sidecar(boxes: &[GroundTruthBox]) -> String {
    boxes
        .iter()
        .map(|b| format!("{} {} {} {} {}\n", b.class_id, b.bbox.x1, b.bbox.y1, b.bbox.x2, b.bbox.y2))
        .collect()
}

pub fn read_sidecar(path: &Path) -> Result<Vec<GroundTruthBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::manifest(path, format!("cannot read: {e}")))?;
    parse_sidecar(&text).map_err(|reason| Error::manifest(path, reason))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, rel: &str, bytes: &[u8]) {
        let p = dir.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, bytes).unwrap();
    }

    fn seg_manifest(dir: &Path, body: &str) -> PathBuf {
        let text = format!("{MANIFEST_HEADER}\nname: t\ntask: segmentation\nclasses: a,b\n\n{body}");
        write(dir, "m.txt", text.as_bytes());
        dir.join("m.txt")
    }

    #[test]
    fn entries_are_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["c.png", "a.png", "b.png", "c_gt.png", "a_gt.png", "b_gt.png"] {
            write(dir.path(), f, b"x");
        }
        let m = load_manifest(&seg_manifest(dir.path(), "c.png\tc_gt.png\na.png\ta_gt.png\nb.png\tb_gt.png\n")).unwrap();
        let ids: Vec<&str> = m.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["a.png", "b.png", "c.png"]);
        assert_eq!(m.classes(), 2);
        assert_eq!(m.roster, vec![0, 1]);
    }

    #[test]
    fn missing_label_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.png", b"x");
        let err = load_manifest(&seg_manifest(dir.path(), "a.png\tgone.png\n")).unwrap_err();
        assert!(matches!(&err, Error::Manifest { .. }));
        assert!(err.to_string().contains("gone.png"), "{err}");
    }

    #[test]
    fn duplicates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.png", b"x");
        write(dir.path(), "g.png", b"x");
        let err = load_manifest(&seg_manifest(dir.path(), "a.png\tg.png\na.png\tg.png\n")).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn detection_manifest_with_count() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        for i in 0..501 {
            write(dir.path(), &format!("img/{i:04}.jpg"), b"x");
            write(dir.path(), &format!("det/{i:04}.txt"), b"0 1 1 5 5\n");
            body.push_str(&format!("img/{i:04}.jpg\tdet/{i:04}.txt\n"));
        }
        let text = format!(
            "{MANIFEST_HEADER}\nname: bdd100k-night-det\ntask: detection\nclasses: person,rider,car,truck,bus,train,motorcycle,bicycle\ncount: 501\n\n{body}"
        );
        write(dir.path(), "m.txt", text.as_bytes());
        let m = load_manifest(&dir.path().join("m.txt")).unwrap();
        assert_eq!(m.task, TaskKind::Detection);
        assert_eq!(m.len(), 501);
        assert_eq!(m.roster.len(), 8);
        let GroundTruth::Detection(boxes) = m.load_truth(&m.entries[0]).unwrap() else {
            panic!("wrong truth kind");
        };
        assert_eq!(boxes.len(), 1);
    }

    #[test]
    fn classification_by_name_and_mask() {
        let dir = tempfile::tempdir().unwrap();
        let synsets: Vec<String> = (0..1000).map(|i| format!("n{i:08}")).collect();
        write(dir.path(), "synsets.txt", synsets.join("\n").as_bytes());
        write(dir.path(), "subset.txt", synsets[..200].join("\n").as_bytes());
        write(dir.path(), "x.jpg", b"x");
        let text = format!(
            "{MANIFEST_HEADER}\nname: r\ntask: classification\nclasses_file: synsets.txt\nsubset: subset.txt\n\nx.jpg\tn00000003\n"
        );
        write(dir.path(), "m.txt", text.as_bytes());
        let m = load_manifest(&dir.path().join("m.txt")).unwrap();
        assert_eq!(m.entries[0].truth, TruthRef::Class(3));
        assert_eq!(m.class_mask.unwrap().count(), 200);
    }

    #[test]
    fn subset_size_enforced() {
        let synsets: Vec<String> = (0..1000).map(|i| format!("n{i}")).collect();
        assert_eq!(imagenet_r_mask(&synsets, &synsets[..200]).unwrap().count(), 200);
        let err = imagenet_r_mask(&synsets, &synsets[..199]).unwrap_err();
        assert!(matches!(err, Error::Manifest { .. }));
        let mut dup = synsets[..199].to_vec();
        dup.push(synsets[0].clone());
        assert!(imagenet_r_mask(&synsets, &dup).is_err());
    }

    #[test]
    fn sidecar_roundtrip() {
        let boxes = parse_sidecar("# comment\n2 0 0 10 20\n\n5 1.5 2 3 4\n").unwrap();
        assert_eq!(boxes.len(), 2);
        assert_eq!(parse_sidecar(&render_sidecar(&boxes)).unwrap(), boxes);
        assert!(parse_sidecar("1 0 0 10\n").is_err());
        assert!(parse_sidecar("1 5 0 1 10\n").is_err());
    }

    #[test]
    fn bad_header() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "m.txt", b"manifest\n");
        assert!(load_manifest(&dir.path().join("m.txt")).is_err());
    }
}
