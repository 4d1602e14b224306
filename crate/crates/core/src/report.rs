//! Run results and their rendering.
//!
//! A [`RunReport`] is a flat list of [`Cell`]s, one per (model, method,
//! seed). Everything else (seed statistics, model averages, relative gains,
//! the markdown tables) is derived from the cells, so a report re-read from
//! its CSV or JSON-lines dump renders byte-identically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ReportFormat;
use crate::error::{Error, Result};
use crate::generation::write_atomic;
use crate::metrics::{aggregate_seeds, format_delta, relative_delta, SeedStats};
use crate::task::TaskKind;

pub const BASE_METHOD: &str = "Base Model";

pub const MARKDOWN_FILE: &str = "report.md";
pub const CSV_FILE: &str = "results.csv";
pub const JSONL_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const SVG_FILE: &str = "plot.svg";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Base,
    Ttm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassValue {
    pub class: String,
    pub value: f64,
}

/// One metric value: a model evaluated under one method and generation seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub dataset: String,
    pub task: TaskKind,
    pub metric: String,
    pub model: String,
    pub method: String,
    pub kind: MethodKind,
    /// Generation seed; `None` for rows that involve no generation.
    pub seed: Option<u64>,
    pub value: f64,
    /// Per-class breakdown (AP per roster class for detection).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detail: Vec<ClassValue>,
}

/// Results for one dataset. Row and column order follow first appearance
/// in `cells`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub cells: Vec<Cell>,
    /// Provenance lines for the summary file (digests, conventions, counts).
    pub provenance: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub kind: MethodKind,
    /// Seed statistics per model, in model order.
    pub per_model: Vec<SeedStats>,
    /// Mean over models of the per-model seed means.
    pub avg: f64,
    /// Relative change of `avg` against the base row.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub dataset: String,
    pub task: TaskKind,
    pub metric: String,
    pub models: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

fn first_appearance<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

impl RunReport {
    pub fn from_cells(cells: Vec<Cell>) -> Self {
        RunReport {
            cells,
            provenance: BTreeMap::new(),
        }
    }

    pub fn models(&self) -> Vec<String> {
        first_appearance(self.cells.iter().map(|c| c.model.as_str()))
    }

    pub fn methods(&self) -> Vec<(String, MethodKind)> {
        first_appearance(self.cells.iter().map(|c| c.method.as_str()))
            .into_iter()
            .map(|m| {
                let kind = self.cells.iter().find(|c| c.method == m).expect("listed").kind;
                (m, kind)
            })
            .collect()
    }

    /// One report per dataset, in order of first appearance. Provenance is
    /// copied to each.
    pub fn by_dataset(&self) -> Vec<RunReport> {
        first_appearance(self.cells.iter().map(|c| c.dataset.as_str()))
            .into_iter()
            .map(|d| RunReport {
                cells: self.cells.iter().filter(|c| c.dataset == d).cloned().collect(),
                provenance: self.provenance.clone(),
            })
            .collect()
    }

    fn head(&self) -> Result<&Cell> {
        self.cells.first().ok_or_else(|| Error::Metric("empty report".into()))
    }

    fn cells_for<'a>(&'a self, model: &'a str, method: &'a str) -> impl Iterator<Item = &'a Cell> + 'a {
        self.cells.iter().filter(move |c| c.model == model && c.method == method)
    }

    pub fn seed_stats(&self, model: &str, method: &str) -> Result<SeedStats> {
        let values: Vec<f64> = self.cells_for(model, method).map(|c| c.value).collect();
        aggregate_seeds(&values).map_err(|_| Error::Metric(format!("no value for {model} under {method}")))
    }

    /// Seed-averaged per-class breakdown for one (model, method).
    pub fn detail_means(&self, model: &str, method: &str) -> Vec<ClassValue> {
        let cells: Vec<&Cell> = self.cells_for(model, method).collect();
        let Some(first) = cells.first() else {
            return Vec::new();
        };
        first
            .detail
            .iter()
            .map(|cv| {
                let values: Vec<f64> = cells
                    .iter()
                    .filter_map(|c| c.detail.iter().find(|d| d.class == cv.class).map(|d| d.value))
                    .collect();
                ClassValue {
                    class: cv.class.clone(),
                    value: values.iter().sum::<f64>() / values.len() as f64,
                }
            })
            .collect()
    }

    /// Seed means per model, their average per method, and each method's
    /// relative change against the base row. Gains use unrounded averages.
    pub fn summary(&self) -> Result<Summary> {
        let head = self.head()?;
        let models = self.models();
        let mut rows = Vec::new();
        for (method, kind) in self.methods() {
            let per_model = models
                .iter()
                .map(|m| self.seed_stats(m, &method))
                .collect::<Result<Vec<_>>>()?;
            let avg = per_model.iter().map(|s| s.mean).sum::<f64>() / per_model.len() as f64;
            rows.push(SummaryRow {
                method,
                kind,
                per_model,
                avg,
                delta: None,
            });
        }
        if let Some(base) = rows.iter().find(|r| r.kind == MethodKind::Base).map(|r| r.avg) {
            for row in rows.iter_mut().filter(|r| r.kind == MethodKind::Ttm) {
                row.delta = Some(relative_delta(base, row.avg)?);
            }
        }
        Ok(Summary {
            dataset: head.dataset.clone(),
            task: head.task,
            metric: head.metric.clone(),
            models,
            rows,
        })
    }
}

/// `m` with one decimal, or `m ± s` when more than one seed contributed.
fn stat_cell(s: &SeedStats) -> String {
    if s.values.len() > 1 {
        s.to_string()
    } else {
        format!("{:.1}", s.mean)
    }
}

fn table_row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn align_row(n: usize) -> String {
    let mut cells = vec![":---".to_string()];
    cells.extend(std::iter::repeat_n("---:".to_string(), n - 1));
    table_row(&cells)
}

/// Methods as rows, models as columns, then the model average and the
/// relative gain over the base row.
pub fn render_markdown(report: &RunReport) -> Result<String> {
    let s = report.summary()?;
    let mut out = format!("## {} ({}, {})\n\n", s.dataset, s.task, s.metric);
    let mut header = vec!["Method".to_string()];
    header.extend(s.models.iter().cloned());
    header.push(format!("Avg {}", s.metric));
    header.push("Δ↑ (%)".into());
    out.push_str(&table_row(&header));
    out.push_str(&align_row(header.len()));
    for row in &s.rows {
        let mut cells = vec![row.method.clone()];
        cells.extend(row.per_model.iter().map(stat_cell));
        cells.push(format!("{:.1}", row.avg));
        cells.push(row.delta.map(format_delta).unwrap_or_default());
        out.push_str(&table_row(&cells));
    }
    if s.task == TaskKind::Detection && report.cells.iter().any(|c| !c.detail.is_empty()) {
        out.push('\n');
        out.push_str(&render_per_class(report)?);
    }
    Ok(out)
}

/// Per-class breakdown: one row per (model, method) with the class values,
/// the overall metric and the gain over that model's base row.
pub fn render_per_class(report: &RunReport) -> Result<String> {
    let s = report.summary()?;
    let classes: Vec<String> = report
        .cells
        .iter()
        .find(|c| !c.detail.is_empty())
        .map(|c| c.detail.iter().map(|d| d.class.clone()).collect())
        .unwrap_or_default();
    let mut header = vec!["Model".to_string(), "Method".to_string()];
    header.extend(classes.iter().cloned());
    header.push(s.metric.clone());
    header.push("Δ↑ (%)".into());
    let mut out = table_row(&header);
    out.push_str(&align_row(header.len()));
    for (mi, model) in s.models.iter().enumerate() {
        let base = s.rows.iter().find(|r| r.kind == MethodKind::Base).map(|r| r.per_model[mi].mean);
        for row in &s.rows {
            let mut cells = vec![model.clone(), row.method.clone()];
            let detail = report.detail_means(model, &row.method);
            for class in &classes {
                let v = detail.iter().find(|d| &d.class == class).map(|d| d.value);
                cells.push(v.map(|v| format!("{v:.1}")).unwrap_or_default());
            }
            let mean = row.per_model[mi].mean;
            cells.push(format!("{mean:.1}"));
            let delta = match (row.kind, base) {
                (MethodKind::Ttm, Some(b)) => relative_delta(b, mean).ok().map(format_delta),
                _ => None,
            };
            cells.push(delta.unwrap_or_default());
            out.push_str(&table_row(&cells));
        }
    }
    Ok(out)
}

/// Models as columns; the base row as plain means, each generation method as
/// `mean ± std` over seeds.
pub fn render_seeds(report: &RunReport) -> Result<String> {
    let s = report.summary()?;
    let mut out = format!("## {}: {} across {} seed(s)\n\n", s.dataset, s.metric, seed_count(report));
    let mut header = vec![String::new()];
    header.extend(s.models.iter().cloned());
    out.push_str(&table_row(&header));
    out.push_str(&align_row(header.len()));
    for row in &s.rows {
        let label = match row.kind {
            MethodKind::Base => "w/o TTM".to_string(),
            MethodKind::Ttm => format!("w/ TTM ({})", strip_method(&row.method)),
        };
        let mut cells = vec![label];
        cells.extend(row.per_model.iter().map(|st| match row.kind {
            MethodKind::Base => format!("{:.1}", st.mean),
            MethodKind::Ttm => st.to_string(),
        }));
        out.push_str(&table_row(&cells));
    }
    Ok(out)
}

/// One row per model; the base value followed by one column per
/// generation method.
pub fn render_backends(report: &RunReport) -> Result<String> {
    let s = report.summary()?;
    let mut out = format!("## {}: {} per generation backend\n\n", s.dataset, s.metric);
    let mut header = vec!["Model".to_string()];
    header.extend(s.rows.iter().map(|r| match r.kind {
        MethodKind::Base => "w/o TTM".to_string(),
        MethodKind::Ttm => strip_method(&r.method).to_string(),
    }));
    out.push_str(&table_row(&header));
    out.push_str(&align_row(header.len()));
    for (mi, model) in s.models.iter().enumerate() {
        let mut cells = vec![model.clone()];
        cells.extend(s.rows.iter().map(|r| stat_cell(&r.per_model[mi])));
        out.push_str(&table_row(&cells));
    }
    Ok(out)
}

fn seed_count(report: &RunReport) -> usize {
    let mut seeds: Vec<u64> = report.cells.iter().filter_map(|c| c.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    seeds.len()
}

/// Row label for a generation method: `+ {label} (TTM)`.
pub fn method_label(label: &str) -> String {
    format!("+ {label} (TTM)")
}

fn strip_method(method: &str) -> &str {
    method
        .strip_prefix("+ ")
        .and_then(|m| m.strip_suffix(" (TTM)"))
        .unwrap_or(method)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    dataset: String,
    task: TaskKind,
    metric: String,
    model: String,
    method: String,
    kind: MethodKind,
    seed: Option<u64>,
    value: f64,
}

pub fn render_csv(report: &RunReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &report.cells {
        w.serialize(CsvRow {
            dataset: c.dataset.clone(),
            task: c.task,
            metric: c.metric.clone(),
            model: c.model.clone(),
            method: c.method.clone(),
            kind: c.kind,
            seed: c.seed,
            value: c.value,
        })
        .map_err(|e| Error::Metric(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Metric(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
}

pub fn parse_csv(text: &str) -> Result<RunReport> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let cells = r
        .deserialize::<CsvRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Argument(format!("results csv: {e}")))?;
            Ok(Cell {
                dataset: row.dataset,
                task: row.task,
                metric: row.metric,
                model: row.model,
                method: row.method,
                kind: row.kind,
                seed: row.seed,
                value: row.value,
                detail: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport::from_cells(cells))
}

pub fn render_jsonl(report: &RunReport) -> String {
    report
        .cells
        .iter()
        .map(|c| serde_json::to_string(c).expect("cells serialize") + "\n")
        .collect()
}

pub fn parse_jsonl(text: &str) -> Result<RunReport> {
    let cells = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Argument(format!("results line {}: {e}", n + 1))))
        .collect::<Result<Vec<Cell>>>()?;
    Ok(RunReport::from_cells(cells))
}

/// `key: value` lines: provenance first, then every derived number at full
/// precision.
pub fn render_summary(report: &RunReport) -> Result<String> {
    let s = report.summary()?;
    let mut out = String::from("ttm-summary v1\n");
    let _ = writeln!(out, "dataset: {}", s.dataset);
    let _ = writeln!(out, "task: {}", s.task);
    let _ = writeln!(out, "metric: {}", s.metric);
    for (k, v) in &report.provenance {
        let _ = writeln!(out, "{k}: {v}");
    }
    for row in &s.rows {
        for (model, st) in s.models.iter().zip(&row.per_model) {
            let _ = writeln!(out, "mean[{} / {}]: {}", row.method, model, st.mean);
            let _ = writeln!(out, "std[{} / {}]: {}", row.method, model, st.std);
            let _ = writeln!(out, "seeds[{} / {}]: {}", row.method, model, st.values.len());
        }
        let _ = writeln!(out, "avg[{}]: {}", row.method, row.avg);
        if let Some(d) = row.delta {
            let _ = writeln!(out, "delta_pct[{}]: {}", row.method, d);
        }
    }
    Ok(out)
}

/// Grouped bar chart: one group per model, one bar per method.
pub fn render_svg(report: &RunReport) -> Result<String> {
    const PALETTE: [&str; 6] = ["#8c8c8c", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];
    let s = report.summary()?;
    let (bar, gap, height, top, left) = (18.0, 24.0, 200.0, 30.0, 40.0);
    let group = bar * s.rows.len() as f64 + gap;
    let width = left + group * s.models.len() as f64 + 20.0;
    let max = s
        .rows
        .iter()
        .flat_map(|r| r.per_model.iter().map(|st| st.mean))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{:.0}\" font-family=\"sans-serif\" font-size=\"10\">\n",
        top + height + 40.0 + 14.0 * s.rows.len() as f64
    );
    let _ = writeln!(out, "<text x=\"{left}\" y=\"16\">{} ({})</text>", xml(&s.dataset), xml(&s.metric));
    for (mi, model) in s.models.iter().enumerate() {
        let x0 = left + group * mi as f64;
        for (ri, row) in s.rows.iter().enumerate() {
            let v = row.per_model[mi].mean;
            let h = height * v / max;
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar}\" height=\"{h:.1}\" fill=\"{}\"><title>{}: {v:.1}</title></rect>",
                x0 + bar * ri as f64,
                top + height - h,
                PALETTE[ri % PALETTE.len()],
                xml(&row.method)
            );
        }
        let _ = writeln!(out, "<text x=\"{x0:.1}\" y=\"{:.1}\">{}</text>", top + height + 14.0, xml(model));
    }
    for (ri, row) in s.rows.iter().enumerate() {
        let y = top + height + 34.0 + 14.0 * ri as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{left}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{y:.1}\">{}</text>",
            y - 9.0,
            PALETTE[ri % PALETTE.len()],
            left + 14.0,
            xml(&row.method)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Write the requested report files into `dir`; returns the paths written.
pub fn write_report(report: &RunReport, dir: &Path, formats: &[ReportFormat], svg: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut files: Vec<(&str, String)> = Vec::new();
    for f in formats {
        match f {
            ReportFormat::Markdown => files.push((MARKDOWN_FILE, render_markdown(report)?)),
            ReportFormat::Csv => files.push((CSV_FILE, render_csv(report)?)),
            ReportFormat::JsonLines => files.push((JSONL_FILE, render_jsonl(report))),
        }
    }
    files.push((SUMMARY_FILE, render_summary(report)?));
    if svg {
        files.push((SVG_FILE, render_svg(report)?));
    }
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Load cells from a `results.jsonl` or `results.csv` file.
pub fn read_results(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => parse_csv(&text),
        _ => parse_jsonl(&text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(model: &str, method: &str, kind: MethodKind, seed: Option<u64>, value: f64) -> Cell {
        Cell {
            dataset: "CS → ACDC".into(),
            task: TaskKind::Segmentation,
            metric: "mIoU".into(),
            model: model.into(),
            method: method.into(),
            kind,
            seed,
            value,
            detail: Vec::new(),
        }
    }

    fn acdc() -> RunReport {
        let base = [42.0, 45.5, 46.9, 57.1, 60.5];
        let qie = [58.3, 58.9, 58.9, 64.6, 66.4];
        let models = ["DeepLabV3+", "OCRNet", "MiT-B1", "MiT-B5", "Mask2Former"];
        let mut cells = Vec::new();
        for (m, v) in models.iter().zip(base) {
            cells.push(cell(m, BASE_METHOD, MethodKind::Base, None, v));
        }
        for (m, v) in models.iter().zip(qie) {
            cells.push(cell(m, &method_label("QIE-2509"), MethodKind::Ttm, Some(0), v));
        }
        RunReport::from_cells(cells)
    }

    #[test]
    fn markdown_gain_column() {
        let md = render_markdown(&acdc()).unwrap();
        assert!(md.contains("| Base Model | 42.0 | 45.5 | 46.9 | 57.1 | 60.5 | 50.4 |  |"), "{md}");
        assert!(md.contains("| + QIE-2509 (TTM) | 58.3 | 58.9 | 58.9 | 64.6 | 66.4 | 61.4 | +21.9% |"), "{md}");
    }

    #[test]
    fn single_cell_table() {
        let r = RunReport::from_cells(vec![cell("m", BASE_METHOD, MethodKind::Base, None, 12.34)]);
        let md = render_markdown(&r).unwrap();
        assert_eq!(md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| :")).count(), 2);
        assert!(md.contains("| Base Model | 12.3 | 12.3 |  |"));
    }

    #[test]
    fn csv_and_jsonl_roundtrip() {
        let mut r = acdc();
        r.cells[0].detail = vec![ClassValue {
            class: "car".into(),
            value: 0.5,
        }];
        assert_eq!(parse_jsonl(&render_jsonl(&r)).unwrap().cells, r.cells);
        let back = parse_csv(&render_csv(&r).unwrap()).unwrap();
        assert_eq!(render_markdown(&back).unwrap(), render_markdown(&acdc()).unwrap());
    }

    #[test]
    fn seeds_table() {
        let mut cells = vec![cell("A", BASE_METHOD, MethodKind::Base, None, 19.8)];
        for (s, v) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            cells.push(cell("A", &method_label("QIE-2509"), MethodKind::Ttm, Some(s as u64), 40.0 + v));
        }
        let md = render_seeds(&RunReport::from_cells(cells)).unwrap();
        assert!(md.contains("| w/o TTM | 19.8 |"), "{md}");
        assert!(md.contains("| w/ TTM (QIE-2509) | 42.5 ± 1.3 |"), "{md}");
        assert!(md.contains("across 4 seed(s)"));
    }

    #[test]
    fn backends_table() {
        let cells = vec![
            cell("Mask2Former", BASE_METHOD, MethodKind::Base, None, 40.6),
            cell("Mask2Former", &method_label("QIE-2509"), MethodKind::Ttm, Some(0), 47.1),
            cell("Mask2Former", &method_label("Flux1. Kont Max"), MethodKind::Ttm, Some(0), 49.1),
        ];
        let md = render_backends(&RunReport::from_cells(cells)).unwrap();
        assert!(md.contains("| Model | w/o TTM | QIE-2509 | Flux1. Kont Max |"), "{md}");
        assert!(md.contains("| Mask2Former | 40.6 | 47.1 | 49.1 |"), "{md}");
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = render_svg(&acdc()).unwrap();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<rect").count(), 10 + 2);
    }
}
