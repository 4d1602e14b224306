//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run with `cargo test -p ttm-cli --test acceptance`. Every criterion has
//! its own runtime budget; exceeding it is a failure.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ttm_core::fixtures::build_mock_fixture;
use ttm_core::fusion::fuse_segmentation;
use ttm_core::inference::{BBox, ClassMask, ClassProbs, Detection, DetectionSet, SegProbMap};
use ttm_core::labels::{LabelMap, IGNORE_INDEX};
use ttm_core::metrics::{
    accuracy, aggregate_seeds, format_delta, map50, miou, relative_delta, ConfusionMatrix, DetectionAccumulator,
    GroundTruthBox, IOU_THRESHOLD,
};
use ttm_core::report::{self, Cell, MethodKind, RunReport, BASE_METHOD};
use ttm_core::task::TaskKind;
use ttm_core::tensor::Tensor;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion(name: &str, budget: Duration, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let (ok, detail) = match result {
        Ok(d) if elapsed <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over budget")),
        Err(e) => (false, e),
    };
    println!(
        "{} {name} [{:.2}s / {}s] {detail}",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    ok
}

// ---------------------------------------------------------------------------
// Printed segmentation results: per-model values, the printed average and,
// for the highlighted row, the printed relative gain.

struct PrintedRow {
    method: &'static str,
    values: [f64; 5],
    avg: f64,
    delta: Option<f64>,
}

const MODELS: [&str; 5] = ["DeepLabV3+", "OCRNet", "Segformer B1", "Segformer B5", "Mask2Former"];
const FLUX: &str = "Flux1. Kontext Max";
const QIE: &str = "QIE-2509";

fn segmentation_table() -> Vec<(&'static str, Vec<PrintedRow>)> {
    let row = |method, values, avg, delta| PrintedRow {
        method,
        values,
        avg,
        delta,
    };
    vec![
        (
            "CS → ACDC",
            vec![
                row(BASE_METHOD, [42.0, 45.5, 46.9, 57.1, 60.5], 50.4, None),
                row(FLUX, [56.5, 56.0, 55.7, 61.3, 64.3], 58.8, None),
                row(QIE, [58.3, 58.9, 58.9, 64.6, 66.4], 61.4, Some(21.8)),
            ],
        ),
        (
            "CS → DarkZurich",
            vec![
                row(BASE_METHOD, [19.8, 22.9, 23.2, 36.8, 40.6], 28.6, None),
                row(FLUX, [41.2, 40.9, 43.1, 47.9, 51.7], 45.0, None),
                row(QIE, [44.8, 43.9, 44.9, 46.7, 51.3], 46.3, Some(61.8)),
            ],
        ),
        (
            "CS → BDD100K-Night",
            vec![
                row(BASE_METHOD, [23.8, 24.4, 25.8, 34.0, 40.6], 29.7, None),
                row(FLUX, [42.3, 37.6, 41.9, 44.7, 49.1], 43.1, None),
                row(QIE, [42.8, 43.0, 41.8, 46.6, 47.1], 44.3, Some(49.1)),
            ],
        ),
        (
            "CS → BDD100K",
            vec![
                row(BASE_METHOD, [48.8, 49.7, 47.4, 55.2, 58.0], 51.8, None),
                row(FLUX, [53.2, 52.8, 50.5, 55.8, 58.7], 54.2, Some(4.6)),
                row(QIE, [50.7, 50.5, 48.7, 53.7, 55.0], 51.7, None),
            ],
        ),
    ]
}

fn printed_report(dataset: &str, rows: &[PrintedRow]) -> RunReport {
    let mut cells = Vec::new();
    for r in rows {
        let (method, kind, seed) = if r.method == BASE_METHOD {
            (BASE_METHOD.to_string(), MethodKind::Base, None)
        } else {
            (report::method_label(r.method), MethodKind::Ttm, Some(0))
        };
        for (model, &value) in MODELS.iter().zip(&r.values) {
            cells.push(Cell {
                dataset: dataset.into(),
                task: TaskKind::Segmentation,
                metric: "mIoU".into(),
                model: model.to_string(),
                method: method.clone(),
                kind,
                seed,
                value,
                detail: Vec::new(),
            });
        }
    }
    RunReport::from_cells(cells)
}

/// The Δ cell of `method`'s row in rendered markdown.
fn markdown_delta(md: &str, method: &str) -> Option<f64> {
    let line = md.lines().find(|l| l.starts_with(&format!("| {method} |")))?;
    let cell = line.trim_end_matches('|').rsplit('|').next()?.trim();
    cell.trim_end_matches('%').parse().ok()
}

fn segmentation_table_arithmetic() -> Check {
    let mut problems = Vec::new();
    let mut checked = 0;
    for (dataset, rows) in segmentation_table() {
        let report = printed_report(dataset, &rows);
        let summary = report.summary().map_err(|e| e.to_string())?;
        let md = report::render_markdown(&report).map_err(|e| e.to_string())?;
        for (printed, computed) in rows.iter().zip(&summary.rows) {
            checked += 1;
            if (computed.avg - printed.avg).abs() > 0.05 + 1e-9 {
                problems.push(format!(
                    "{dataset} {} avg {:.3} vs printed {}",
                    printed.method, computed.avg, printed.avg
                ));
            }
            if let Some(d) = printed.delta {
                checked += 1;
                let label = report::method_label(printed.method);
                let shown = markdown_delta(&md, &label).ok_or(format!("{dataset}: no Δ cell for {label}"))?;
                if (shown - d).abs() > 0.2 + 1e-9 {
                    problems.push(format!("{dataset} Δ {shown:+.1} vs printed {d:+.1}"));
                }
            }
        }
    }
    if problems.is_empty() {
        Ok(format!("{checked} values within tolerance"))
    } else {
        Err(problems.join("; "))
    }
}

// ---------------------------------------------------------------------------

fn detection_roster_average() -> Check {
    // seven printed per-class APs; the eighth roster class (train) has none
    let rows: [([f64; 7], f64); 6] = [
        ([16.1, 22.8, 18.6, 4.3, 1.0, 3.3, 41.1], 13.4),
        ([36.9, 29.7, 51.4, 29.7, 12.3, 30.6, 36.3], 28.4),
        ([5.0, 22.8, 23.7, 10.9, 22.0, 27.7, 34.9], 18.4),
        ([15.9, 22.8, 13.6, 1.3, 0.0, 2.5, 25.6], 10.2),
        ([35.1, 40.0, 51.6, 31.7, 9.3, 25.2, 61.1], 31.8),
        ([4.5, 22.8, 24.5, 12.1, 14.7, 36.6, 36.6], 19.0),
    ];
    let roster: Vec<u32> = (0..8).collect();
    let present = [0u32, 1, 2, 3, 4, 6, 7];
    let mut out = Vec::new();
    for (aps, printed) in rows {
        let per_class: BTreeMap<u32, f64> = present.iter().copied().zip(aps).collect();
        let m = map50(&per_class, &roster).map_err(|e| e.to_string())?;
        ensure((m - printed).abs() <= 0.25 + 1e-9, || format!("overall {m:.3} vs printed {printed}"))?;
        out.push(format!("{m:.2}"));
    }
    let d = format_delta(relative_delta(10.2, 31.8).map_err(|e| e.to_string())?);
    ensure(d == "+211.8%", || format!("10.2 → 31.8 gives {d}"))?;
    Ok(format!("overall {}", out.join(", ")))
}

fn classification_deltas() -> Check {
    let a = relative_delta(36.1, 60.8).map_err(|e| e.to_string())?;
    let b = relative_delta(41.3, 63.5).map_err(|e| e.to_string())?;
    ensure((a - 68.4).abs() <= 0.2, || format!("36.1 → 60.8 gives {a:.3}"))?;
    ensure((b - 53.8).abs() <= 0.1, || format!("41.3 → 63.5 gives {b:.3}"))?;
    Ok(format!("{} and {}", format_delta(a), format_delta(b)))
}

// ---------------------------------------------------------------------------
// Brute-force oracles. None of these share code with the engines.

fn random_labels(rng: &mut ChaCha8Rng, w: usize, h: usize, classes: u8, ignore: bool) -> LabelMap {
    let labels = (0..w * h)
        .map(|_| {
            if ignore && rng.random_bool(0.15) {
                IGNORE_INDEX
            } else {
                rng.random_range(0..classes)
            }
        })
        .collect();
    LabelMap::new(w, h, labels).unwrap()
}

fn miou_instances(rng: &mut ChaCha8Rng, n: usize) -> Result<(), String> {
    for case in 0..n {
        let classes = rng.random_range(2..=6u8);
        let images: Vec<(LabelMap, LabelMap)> = (0..rng.random_range(1..=3))
            .map(|_| {
                let (w, h) = (rng.random_range(1..=8), rng.random_range(1..=8));
                (random_labels(rng, w, h, classes, false), random_labels(rng, w, h, classes, true))
            })
            .collect();

        let mut inter = vec![0u64; classes as usize];
        let mut union = vec![0u64; classes as usize];
        for (pred, gt) in &images {
            for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
                if g == IGNORE_INDEX {
                    continue;
                }
                for k in 0..classes {
                    if p == k && g == k {
                        inter[k as usize] += 1;
                    }
                    if p == k || g == k {
                        union[k as usize] += 1;
                    }
                }
            }
        }
        let expected: Vec<Option<f64>> = inter
            .iter()
            .zip(&union)
            .map(|(&i, &u)| (u > 0).then(|| 100.0 * i as f64 / u as f64))
            .collect();

        let mut cm = ConfusionMatrix::new(classes as usize);
        for (pred, gt) in &images {
            cm.accumulate(pred, gt).map_err(|e| e.to_string())?;
        }
        for k in 0..classes as usize {
            ensure(cm.get(k, k) == inter[k], || format!("case {case}: class {k} intersection"))?;
        }
        let present: Vec<f64> = expected.iter().flatten().copied().collect();
        match miou(&cm) {
            Ok(r) => {
                ensure(r.per_class == expected, || format!("case {case}: {:?} vs {expected:?}", r.per_class))?;
                let mean = present.iter().sum::<f64>() / present.len() as f64;
                ensure(r.mean == mean, || format!("case {case}: mean {} vs {mean}", r.mean))?;
            }
            Err(_) => ensure(present.is_empty(), || format!("case {case}: engine refused a scorable case"))?,
        }
    }
    Ok(())
}

/// Integer box with its coordinates kept for exact IoU arithmetic.
#[derive(Clone, Copy)]
struct IBox([i64; 4]);

impl IBox {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let x1 = rng.random_range(0..10);
        let y1 = rng.random_range(0..10);
        IBox([x1, y1, x1 + rng.random_range(1..=5), y1 + rng.random_range(1..=5)])
    }

    fn near(self, rng: &mut ChaCha8Rng) -> Self {
        let [x1, y1, x2, y2] = self.0;
        let dx = rng.random_range(-1..=1);
        let dy = rng.random_range(-1..=1);
        IBox([x1 + dx, y1 + dy, x2 + dx, (y2 + dy + rng.random_range(0..=1)).max(y1 + dy + 1)])
    }

    fn bbox(self) -> BBox {
        let [x1, y1, x2, y2] = self.0.map(|v| v as f32);
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn area(self) -> i64 {
        (self.0[2] - self.0[0]) * (self.0[3] - self.0[1])
    }

    /// (intersection, union)
    fn overlap(self, o: IBox) -> (i64, i64) {
        let iw = (self.0[2].min(o.0[2]) - self.0[0].max(o.0[0])).max(0);
        let ih = (self.0[3].min(o.0[3]) - self.0[1].max(o.0[1])).max(0);
        let inter = iw * ih;
        (inter, self.area() + o.area() - inter)
    }
}

struct ODet {
    class: u32,
    /// score in tenths
    score: u32,
    b: IBox,
}

fn ap_instances(rng: &mut ChaCha8Rng, n: usize) -> Result<(), String> {
    for case in 0..n {
        let classes = rng.random_range(1..=3u32);
        let mut images: Vec<(Vec<ODet>, Vec<(u32, IBox)>)> = Vec::new();
        for _ in 0..rng.random_range(1..=3) {
            let mut gts = Vec::new();
            let mut dets = Vec::new();
            for c in 0..classes {
                for _ in 0..rng.random_range(0..=5) {
                    gts.push((c, IBox::random(rng)));
                }
                for _ in 0..rng.random_range(0..=5) {
                    let own: Vec<IBox> = gts.iter().filter(|g| g.0 == c).map(|g| g.1).collect();
                    let b = if !own.is_empty() && rng.random_bool(0.6) {
                        own[rng.random_range(0..own.len())].near(rng)
                    } else {
                        IBox::random(rng)
                    };
                    dets.push(ODet {
                        class: c,
                        score: rng.random_range(0..=10),
                        b,
                    });
                }
            }
            // interleave classes
            for i in (1..dets.len()).rev() {
                dets.swap(i, rng.random_range(0..=i));
            }
            images.push((dets, gts));
        }

        let mut acc = DetectionAccumulator::new(IOU_THRESHOLD);
        for (i, (dets, gts)) in images.iter().enumerate() {
            let set = DetectionSet::new(
                dets.iter()
                    .map(|d| Detection {
                        class_id: d.class,
                        score: d.score as f32 / 10.0,
                        bbox: d.b.bbox(),
                    })
                    .collect(),
            )
            .unwrap();
            let gts: Vec<GroundTruthBox> = gts
                .iter()
                .map(|&(c, b)| GroundTruthBox {
                    class_id: c,
                    bbox: b.bbox(),
                })
                .collect();
            acc.add_image(i as u64, &set, &gts);
        }
        let engine_ap = acc.per_class_ap();

        let mut oracle_ap = BTreeMap::new();
        for c in 0..classes {
            // (score, image, index in image, hit)
            let mut ranked: Vec<(u32, usize, usize, bool)> = Vec::new();
            let mut gt_total = 0u64;
            for (img, (dets, gts)) in images.iter().enumerate() {
                let own_gts: Vec<IBox> = gts.iter().filter(|g| g.0 == c).map(|g| g.1).collect();
                gt_total += own_gts.len() as u64;
                let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].class == c).collect();
                order.sort_by_key(|&i| (std::cmp::Reverse(dets[i].score), i));
                let mut taken = vec![false; own_gts.len()];
                for i in order {
                    let mut best: Option<(usize, (i64, i64))> = None;
                    for (k, g) in own_gts.iter().enumerate() {
                        let (inter, uni) = dets[i].b.overlap(*g);
                        if taken[k] || 2 * inter < uni {
                            continue;
                        }
                        if best.is_none_or(|(_, (bi, bu))| inter * bu > bi * uni) {
                            best = Some((k, (inter, uni)));
                        }
                    }
                    if let Some((k, _)) = best {
                        taken[k] = true;
                    }
                    ranked.push((dets[i].score, img, i, best.is_some()));
                }
            }
            ranked.sort_by_key(|&(s, img, i, _)| (std::cmp::Reverse(s), img, i));
            let hits: Vec<bool> = ranked.iter().map(|r| r.3).collect();
            let (engine_hits, engine_gt) = acc.ranked(c);
            ensure(engine_hits == hits, || format!("case {case} class {c}: PR sequence {engine_hits:?} vs {hits:?}"))?;
            ensure(engine_gt == gt_total, || format!("case {case} class {c}: gt count"))?;

            let ap = if gt_total == 0 {
                (!hits.is_empty()).then_some(0.0)
            } else {
                // every prefix is an operating point; the interpolated
                // precision at a hit is the best precision at or after it
                let prec: Vec<(u64, u64)> = (0..hits.len())
                    .map(|j| (hits[..=j].iter().filter(|&&h| h).count() as u64, j as u64 + 1))
                    .collect();
                let mut sum = 0.0;
                for (i, &h) in hits.iter().enumerate() {
                    if h {
                        let best = prec[i..].iter().copied().fold((0u64, 1u64), |a, b| if b.0 * a.1 > a.0 * b.1 { b } else { a });
                        sum += best.0 as f64 / best.1 as f64;
                    }
                }
                Some(sum / gt_total as f64)
            };
            if let Some(ap) = ap {
                oracle_ap.insert(c, ap);
            }
            match (engine_ap.get(&c), ap) {
                (None, None) => {}
                (Some(e), Some(o)) => ensure((e - o).abs() < 1e-12, || format!("case {case} class {c}: AP {e} vs {o}"))?,
                (e, o) => return Err(format!("case {case} class {c}: AP {e:?} vs {o:?}")),
            }
        }
        let roster: Vec<u32> = (0..=classes).collect();
        let engine_map = map50(&engine_ap, &roster).map_err(|e| e.to_string())?;
        let oracle_map = roster.iter().map(|c| oracle_ap.get(c).copied().unwrap_or(0.0)).sum::<f64>() / roster.len() as f64;
        ensure((engine_map - oracle_map).abs() < 1e-12, || format!("case {case}: mAP {engine_map} vs {oracle_map}"))?;
    }
    Ok(())
}

fn top1_instances(rng: &mut ChaCha8Rng, n: usize) -> Result<(), String> {
    for case in 0..n {
        let k = rng.random_range(2..=10usize);
        let mask: Option<Vec<bool>> = rng.random_bool(0.5).then(|| {
            let mut m: Vec<bool> = (0..k).map(|_| rng.random_bool(0.6)).collect();
            let forced = rng.random_range(0..k);
            m[forced] = true;
            m
        });
        let allowed = |c: usize| mask.as_ref().is_none_or(|m| m[c]);
        let mut samples = Vec::new();
        let mut correct = 0u64;
        let total = rng.random_range(1..=20u64);
        for _ in 0..total {
            let weights: Vec<u32> = loop {
                let w: Vec<u32> = (0..k).map(|_| rng.random_range(0..=4)).collect();
                if w.iter().sum::<u32>() > 0 {
                    break w;
                }
            };
            let gt = loop {
                let g = rng.random_range(0..k);
                if allowed(g) {
                    break g;
                }
            };
            // count by hand: first allowed class with the largest weight
            let mut best: Option<usize> = None;
            for c in (0..k).filter(|&c| allowed(c)) {
                if best.is_none_or(|b| weights[c] > weights[b]) {
                    best = Some(c);
                }
            }
            correct += u64::from(best == Some(gt));
            let sum: u32 = weights.iter().sum();
            let probs = ClassProbs::new(weights.iter().map(|&w| w as f32 / sum as f32).collect()).unwrap();
            samples.push((probs, gt));
        }
        let mask = mask.map(|m| ClassMask::new(m).unwrap());
        let got = accuracy(&samples, mask.as_ref()).map_err(|e| e.to_string())?;
        let expected = 100.0 * correct as f64 / total as f64;
        ensure(got == expected, || format!("case {case}: top-1 {got} vs {expected}"))?;
    }
    Ok(())
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    miou_instances(&mut rng, 1000)?;
    ap_instances(&mut rng, 1000)?;
    top1_instances(&mut rng, 1000)?;
    Ok("1000 instances each of mIoU, AP/mAP and top-1".into())
}

// ---------------------------------------------------------------------------

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> SegProbMap {
    let mut probs = vec![0f32; c * h * w];
    for px in 0..h * w {
        let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-3).collect();
        let sum: f64 = raw.iter().sum();
        for (k, r) in raw.iter().enumerate() {
            probs[k * h * w + px] = (r / sum) as f32;
        }
    }
    SegProbMap::new(c, h, w, probs, 1e-3).unwrap()
}

fn fusion_properties() -> Check {
    let ps = SegProbMap::new(2, 1, 2, vec![1.0, 1.0, 0.0, 0.0], 1e-6).unwrap();
    let t = SegProbMap::new(2, 1, 2, vec![0.0, 0.0, 1.0, 1.0], 1e-6).unwrap();
    let fused = fuse_segmentation(&ps, &t, 0.5).map_err(|e| e.to_string())?;
    ensure(fused.probs() == [0.5, 0.5, 0.5, 0.5], || format!("example gives {:?}", fused.probs()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0f64;
    for case in 0..1000 {
        let (c, h, w) = (rng.random_range(1..=6), rng.random_range(1..=8), rng.random_range(1..=8));
        let a = random_map(&mut rng, c, h, w);
        let b = random_map(&mut rng, c, h, w);
        let weight: f32 = rng.random();
        let same = fuse_segmentation(&a, &a, weight).map_err(|e| e.to_string())?;
        ensure(same == a, || format!("case {case}: fuse(p, p, {weight}) != p"))?;
        let ab = fuse_segmentation(&a, &b, 0.5).map_err(|e| e.to_string())?;
        let ba = fuse_segmentation(&b, &a, 0.5).map_err(|e| e.to_string())?;
        ensure(ab == ba, || format!("case {case}: not symmetric"))?;
        let fused = fuse_segmentation(&a, &b, weight).map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                let sum: f64 = fused.pixel(y, x).iter().map(|&p| f64::from(p)).sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
    }
    ensure(worst <= 1e-6, || format!("simplex deviation {worst:e}"))?;
    Ok(format!("identity, symmetry, worst simplex deviation {worst:.1e}"))
}

// ---------------------------------------------------------------------------

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["ttm"];
    argv.extend_from_slice(args);
    let code = ttm_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn backend_calls(out_dir: &Path) -> u64 {
    let log = String::from_utf8(read(&out_dir.join("run.log"))).unwrap();
    log.lines()
        .find_map(|l| l.strip_prefix("backend_calls: "))
        .and_then(|v| v.parse().ok())
        .expect("backend_calls in run.log")
}

fn mock_end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = build_mock_fixture(dir.path(), 20, 64, 48, "mock-invert").map_err(|e| e.to_string())?;
    let config = fixture.config.to_str().unwrap();
    let out_dir = dir.path().join("out");

    let (code, _, err) = cli(&["eval", "--config", config]);
    ensure(code == 0, || format!("first run exit {code}: {err}"))?;
    let report = report::read_results(&out_dir.join("results.jsonl")).map_err(|e| e.to_string())?;
    let value = |kind| report.cells.iter().find(|c| c.kind == kind).map(|c| c.value);
    let base = value(MethodKind::Base).ok_or("no base cell")?;
    let ttm = value(MethodKind::Ttm).ok_or("no TTM cell")?;
    ensure(ttm == 100.0, || format!("TTM mIoU {ttm}"))?;
    ensure((base - fixture.expected_base_miou).abs() < 1e-9, || {
        format!("base mIoU {base} vs closed form {}", fixture.expected_base_miou)
    })?;
    ensure(backend_calls(&out_dir) == 20, || "first run should call the backend once per image".into())?;

    let files = ["report.md", "results.csv", "results.jsonl", "summary.txt", "plot.svg", "prompt.txt"];
    let before: Vec<Vec<u8>> = files.iter().map(|f| read(&out_dir.join(f))).collect();
    let (code, _, err) = cli(&["eval", "--config", config]);
    ensure(code == 0, || format!("rerun exit {code}: {err}"))?;
    let calls = backend_calls(&out_dir);
    ensure(calls == 0, || format!("rerun made {calls} backend calls"))?;
    for (f, old) in files.iter().zip(&before) {
        ensure(&read(&out_dir.join(f)) == old, || format!("{f} changed on rerun"))?;
    }
    Ok(format!("TTM {ttm:.1}, base {base:.4} = closed form, rerun 0 calls, identical reports"))
}

/// Sample standard deviation, two-pass.
fn textbook_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn seed_aggregation() -> Check {
    let known = aggregate_seeds(&[1.0, 2.0, 3.0, 4.0]).map_err(|e| e.to_string())?;
    ensure((known.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-6, || format!("[1,2,3,4] std {}", known.std))?;
    ensure(known.mean == 2.5, || format!("[1,2,3,4] mean {}", known.mean))?;
    let flat = aggregate_seeds(&[3.3; 6]).map_err(|e| e.to_string())?;
    ensure(flat.std == 0.0, || format!("constant list std {}", flat.std))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = build_mock_fixture(dir.path(), 20, 64, 48, "mock-invert-jitter").map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(&fixture.config).map_err(|e| e.to_string())?;
    std::fs::write(&fixture.config, text.replace("seeds = 0\n", "seeds = 0..10\n")).map_err(|e| e.to_string())?;
    let (code, out, err) = cli(&["seeds", "--config", fixture.config.to_str().unwrap()]);
    ensure(code == 0, || format!("exit {code}: {err}"))?;

    let lines: Vec<&str> = out.lines().filter(|l| l.starts_with('|')).collect();
    ensure(lines.len() == 4, || format!("expected header, rule and two rows:\n{out}"))?;
    ensure(out.contains("across 10 seed(s)"), || format!("no seed count in title:\n{out}"))?;
    ensure(lines[0].contains("Hue oracle"), || format!("model column missing: {}", lines[0]))?;
    let cells = |l: &str| l.trim_matches('|').split('|').map(str::trim).map(String::from).collect::<Vec<_>>();
    let base_row = cells(lines[2]);
    let ttm_row = cells(lines[3]);
    ensure(base_row[0] == "w/o TTM", || format!("first row {base_row:?}"))?;
    ensure(ttm_row[0] == "w/ TTM (Inverse)", || format!("second row {ttm_row:?}"))?;

    let report = report::read_results(&dir.path().join("out/results.jsonl")).map_err(|e| e.to_string())?;
    let values: Vec<f64> = report.cells.iter().filter(|c| c.kind == MethodKind::Ttm).map(|c| c.value).collect();
    ensure(values.len() == 10, || format!("{} seed cells", values.len()))?;
    let stats = aggregate_seeds(&values).map_err(|e| e.to_string())?;
    let expected = textbook_std(&values);
    ensure(expected > 0.0, || "seed-dependent mock produced identical runs".into())?;
    ensure((stats.std - expected).abs() < 1e-6, || format!("std {} vs {expected}", stats.std))?;
    let cell = format!("{:.1} ± {:.1}", stats.mean, expected);
    ensure(ttm_row[1] == cell, || format!("cell {:?} vs {cell:?}", ttm_row[1]))?;
    Ok(format!("w/ TTM {cell} over 10 seeds"))
}

// ---------------------------------------------------------------------------

fn golden_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/wire")
}

fn wire_format() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..2000 {
        let ndim = rng.random_range(1..=4);
        let dims: Vec<usize> = (0..ndim).map(|_| rng.random_range(1..=5)).collect();
        let n: usize = dims.iter().product();
        let t = if rng.random_bool(0.5) {
            let values: Vec<f32> = (0..n)
                .map(|_| loop {
                    let v = f32::from_bits(rng.random());
                    if v.is_finite() {
                        break v;
                    }
                })
                .collect();
            Tensor::from_f32(dims.clone(), values).unwrap()
        } else {
            Tensor::from_u8(dims.clone(), (0..n).map(|_| rng.random()).collect()).unwrap()
        };
        let bytes = t.encode();
        let back = Tensor::decode(&bytes).map_err(|e| format!("case {case}: {e}"))?;
        ensure(back.encode() == bytes, || format!("case {case}: re-encoding differs"))?;
        ensure(back.dims() == t.dims() && back.dtype() == t.dtype(), || format!("case {case}: header differs"))?;
    }

    let index: serde_json::Value =
        serde_json::from_slice(&read(&golden_dir().join("golden.json"))).map_err(|e| e.to_string())?;
    let entries = index.as_array().ok_or("golden.json is not a list")?;
    for e in entries {
        let file = e["file"].as_str().unwrap();
        let golden = read(&golden_dir().join(file));
        let dims: Vec<usize> = e["dims"].as_array().unwrap().iter().map(|d| d.as_u64().unwrap() as usize).collect();
        let values = e["values"].as_array().unwrap();
        let t = match e["dtype"].as_str().unwrap() {
            "f32" => Tensor::from_f32(dims, values.iter().map(|v| v.as_f64().unwrap() as f32).collect()),
            _ => Tensor::from_u8(dims, values.iter().map(|v| v.as_u64().unwrap() as u8).collect()),
        }
        .unwrap();
        ensure(t.encode() == golden, || format!("{file}: encoding differs from golden bytes"))?;
        let decoded = Tensor::decode(&golden).map_err(|e| format!("{file}: {e}"))?;
        ensure(decoded == t, || format!("{file}: decoded tensor differs"))?;
    }
    Ok(format!("2000 random roundtrips, {} golden files", entries.len()))
}

fn main() {
    let s = Duration::from_secs;
    let results = [
        criterion("segmentation table arithmetic", s(1), segmentation_table_arithmetic),
        criterion("detection roster average", s(1), detection_roster_average),
        criterion("classification deltas", s(1), classification_deltas),
        criterion("metric oracle equivalence", s(30), metric_oracles),
        criterion("fusion properties", s(5), fusion_properties),
        criterion("mock end-to-end", s(20), mock_end_to_end),
        criterion("seed aggregation", s(10), seed_aggregation),
        criterion("wire-format conformance", s(5), wire_format),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
