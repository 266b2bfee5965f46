//! Detection average precision with greedy IoU matching.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::annotations::BoundingBox;
use crate::error::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }

    /// Splits are cumulative: the medium split holds easy and medium faces,
    /// the hard split holds every face.
    pub fn includes(self, face: Difficulty) -> bool {
        face <= self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub image: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub difficulty: Difficulty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub image: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl DetectionRecord {
    pub fn new(image: impl Into<String>, bbox: BoundingBox, confidence: f64) -> Result<Self> {
        let d = DetectionRecord {
            image: image.into(),
            bbox,
            confidence,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Data(format!(
                "detection confidence {} outside [0, 1] in {}",
                self.confidence, self.image
            )));
        }
        Ok(())
    }
}

/// Intersection over union with closed-interval pixel extents, so a box
/// from `x0` to `x1` is `x1 - x0 + 1` pixels wide.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x1().min(b.x1()) - a.x0().max(b.x0()) + 1.0;
    let ih = a.y1().min(b.y1()) - a.y0().max(b.y0()) + 1.0;
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let area = |r: &BoundingBox| (r.width() + 1.0) * (r.height() + 1.0);
    let inter = iw * ih;
    inter / (area(a) + area(b) - inter)
}

/// Detection indices by descending confidence; ties keep input order.
pub fn ranking(detections: &[DetectionRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| {
        detections[j]
            .confidence
            .partial_cmp(&detections[i].confidence)
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
}

/// True-positive flag for every detection, visiting detections in
/// [`ranking`] order. Each takes the unmatched ground truth of its image
/// with the highest IoU (ties: lower index) if that IoU reaches the
/// threshold.
pub fn match_detections(
    detections: &[DetectionRecord],
    ground_truths: &[&GroundTruthRecord],
    iou_threshold: f64,
) -> Vec<bool> {
    let mut by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in ground_truths.iter().enumerate() {
        by_image.entry(g.image.as_str()).or_default().push(i);
    }
    let mut used = vec![false; ground_truths.len()];
    let mut hit = vec![false; detections.len()];
    for i in ranking(detections) {
        let d = &detections[i];
        let Some(cands) = by_image.get(d.image.as_str()) else { continue };
        let mut best: Option<(usize, f64)> = None;
        for &g in cands {
            if used[g] {
                continue;
            }
            let o = iou(&d.bbox, &ground_truths[g].bbox);
            if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
            hit[i] = true;
        }
    }
    hit
}

/// Area under the all-points interpolated precision/recall curve.
///
/// Curve points are taken after each group of equal confidence. `None`
/// when there is no ground truth; `Some(0.0)` when there are no detections.
pub fn average_precision(
    detections: &[DetectionRecord],
    ground_truths: &[&GroundTruthRecord],
    iou_threshold: f64,
) -> Option<f64> {
    if ground_truths.is_empty() {
        return None;
    }
    let hit = match_detections(detections, ground_truths, iou_threshold);
    let order = ranking(detections);
    let total = ground_truths.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if hit[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order
            .get(k + 1)
            .is_none_or(|&j| detections[j].confidence != detections[i].confidence);
        if last_of_group {
            points.push((tp as f64 / total, tp as f64 / (tp + fp) as f64));
        }
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    for (idx, &(recall, precision)) in points.iter().enumerate().rev() {
        envelope = envelope.max(precision);
        let prev_recall = if idx == 0 { 0.0 } else { points[idx - 1].0 };
        ap += (recall - prev_recall) * envelope;
    }
    Some(ap)
}

/// Ground truths of one cumulative split.
pub fn split(ground_truths: &[GroundTruthRecord], difficulty: Difficulty) -> Vec<&GroundTruthRecord> {
    ground_truths.iter().filter(|g| difficulty.includes(g.difficulty)).collect()
}

/// AP of one split before and after anonymization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAp {
    pub split: Difficulty,
    pub ground_truths: usize,
    pub original: Option<f64>,
    pub anonymized: Option<f64>,
    /// `anonymized / original`; `None` when either is undefined or the
    /// original AP is zero.
    pub ratio: Option<f64>,
}

/// Per-split AP on original and anonymized images.
///
/// Every detection must refer to an image that has ground truth, and
/// `splits` must not repeat.
pub fn ap_degradation_report(
    original: &[DetectionRecord],
    anonymized: &[DetectionRecord],
    ground_truths: &[GroundTruthRecord],
    splits: &[Difficulty],
    iou_threshold: f64,
) -> Result<Vec<SplitAp>> {
    let images: BTreeSet<&str> = ground_truths.iter().map(|g| g.image.as_str()).collect();
    for (what, dets) in [("original", original), ("anonymized", anonymized)] {
        if let Some(d) = dets.iter().find(|d| !images.contains(d.image.as_str())) {
            return Err(Error::Data(format!(
                "{what} detection on image {} that has no ground truth",
                d.image
            )));
        }
    }
    let unique: BTreeSet<_> = splits.iter().collect();
    if unique.len() != splits.len() {
        return Err(Error::invalid("splits must not repeat"));
    }
    Ok(splits
        .iter()
        .map(|&s| {
            let gts = split(ground_truths, s);
            let before = average_precision(original, &gts, iou_threshold);
            let after = average_precision(anonymized, &gts, iou_threshold);
            let ratio = match (before, after) {
                (Some(b), Some(a)) if b > 0.0 => Some(a / b),
                _ => None,
            };
            SplitAp {
                split: s,
                ground_truths: gts.len(),
                original: before,
                anonymized: after,
                ratio,
            }
        })
        .collect())
}
