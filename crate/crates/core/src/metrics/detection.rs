use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::inference::{BBox, DetectionSet};

pub const IOU_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub class_id: u32,
    pub bbox: BBox,
}

/// Intersection over union of two boxes; 0 when disjoint.
pub fn iou_box(a: &BBox, b: &BBox) -> f32 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = f64::from(iw) * f64::from(ih);
    if inter == 0.0 {
        return 0.0;
    }
    (inter / (a.area() + b.area() - inter)) as f32
}

/// One scored detection after matching: its score, whether it hit a ground
/// truth box, and its position in evaluation order (image, then rank).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    score: f32,
    tp: bool,
    order: (u64, u32),
}

/// Per-class matched detections and ground-truth counts, mergeable across
/// workers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionAccumulator {
    scored: BTreeMap<u32, Vec<Scored>>,
    gt_counts: BTreeMap<u32, u64>,
    threshold: f32,
}

impl DetectionAccumulator {
    pub fn new(threshold: f32) -> Self {
        DetectionAccumulator {
            threshold,
            ..Default::default()
        }
    }

    /// Match one image's detections against its ground truth. `image_index`
    /// fixes the position of this image in score-tie ordering.
    pub fn add_image(&mut self, image_index: u64, dets: &DetectionSet, gts: &[GroundTruthBox]) {
        for g in gts {
            *self.gt_counts.entry(g.class_id).or_default() += 1;
        }
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&i, &j| desc(dets.detections()[i].score, dets.detections()[j].score));
        let mut matched = vec![false; gts.len()];
        for (rank, &i) in order.iter().enumerate() {
            let d = &dets.detections()[i];
            let mut best: Option<(usize, f32)> = None;
            for (k, g) in gts.iter().enumerate() {
                if matched[k] || g.class_id != d.class_id {
                    continue;
                }
                let iou = iou_box(&d.bbox, &g.bbox);
                if iou >= self.threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((k, iou));
                }
            }
            if let Some((k, _)) = best {
                matched[k] = true;
            }
            self.scored.entry(d.class_id).or_default().push(Scored {
                score: d.score,
                tp: best.is_some(),
                order: (image_index, rank as u32),
            });
        }
    }

    pub fn merge(&mut self, other: DetectionAccumulator) {
        for (class, mut v) in other.scored {
            self.scored.entry(class).or_default().append(&mut v);
        }
        for (class, n) in other.gt_counts {
            *self.gt_counts.entry(class).or_default() += n;
        }
    }

    /// AP per class seen in either detections or ground truth. Classes with
    /// ground truth but no hits score 0.
    pub fn per_class_ap(&self) -> BTreeMap<u32, f64> {
        let mut classes: Vec<u32> = self.scored.keys().chain(self.gt_counts.keys()).copied().collect();
        classes.sort_unstable();
        classes.dedup();
        classes
            .into_iter()
            .filter_map(|c| {
                let (tps, gt_count) = self.ranked(c);
                Some((c, ap_from_ranked(&tps, gt_count)?))
            })
            .collect()
    }

    /// Hit flags of `class_id` in evaluation order (score descending, then
    /// image, then rank within the image) and its ground-truth count.
    pub fn ranked(&self, class_id: u32) -> (Vec<bool>, u64) {
        let mut scored = self.scored.get(&class_id).cloned().unwrap_or_default();
        scored.sort_by(|a, b| desc(a.score, b.score).then(a.order.cmp(&b.order)));
        (
            scored.iter().map(|s| s.tp).collect(),
            self.gt_counts.get(&class_id).copied().unwrap_or(0),
        )
    }
}

fn desc(a: f32, b: f32) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// All-point interpolated AP from TP flags in descending score order.
/// `None` when there is neither ground truth nor a detection.
pub fn ap_from_ranked(tps: &[bool], gt_count: u64) -> Option<f64> {
    if gt_count == 0 {
        return if tps.is_empty() { None } else { Some(0.0) };
    }
    let mut recall = Vec::with_capacity(tps.len());
    let mut precision = Vec::with_capacity(tps.len());
    let mut tp = 0u64;
    for (i, &hit) in tps.iter().enumerate() {
        tp += u64::from(hit);
        recall.push(tp as f64 / gt_count as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    // precision envelope, right to left
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    Some(ap)
}

/// AP of one class over a set of images, given as (detections, ground
/// truth) pairs restricted to that class.
pub fn average_precision(images: &[(DetectionSet, Vec<GroundTruthBox>)], class_id: u32, iou_thr: f32) -> Option<f64> {
    let mut acc = DetectionAccumulator::new(iou_thr);
    for (i, (dets, gts)) in images.iter().enumerate() {
        acc.add_image(i as u64, dets, gts);
    }
    let ap = acc.per_class_ap();
    ap.get(&class_id).copied()
}

/// Mean AP over `roster`, on the same scale as the inputs. Roster classes
/// without a value count as 0.
pub fn map50(per_class_ap: &BTreeMap<u32, f64>, roster: &[u32]) -> Result<f64> {
    if roster.is_empty() {
        return Err(Error::Metric("empty class roster".into()));
    }
    let sum: f64 = roster.iter().map(|c| per_class_ap.get(c).copied().unwrap_or(0.0)).sum();
    Ok(sum / roster.len() as f64)
}
