//! Face-size statistics, the combined evaluation report, and published
//! reference numbers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ap::{Difficulty, GroundTruthRecord, SplitAp};
use crate::error::Result;

pub const DEFAULT_RESOLUTION_THRESHOLDS: [f64; 2] = [14.0, 16.0];

/// Histogram bin edges in pixels; the last bin is open-ended.
pub const HISTOGRAM_EDGES: [f64; 6] = [0.0, 8.0, 16.0, 32.0, 64.0, 128.0];

/// Resolution of a face: the longer side of its box, i.e. the side of the
/// smallest square holding it.
pub fn face_resolution(g: &GroundTruthRecord) -> f64 {
    g.bbox.width().max(g.bbox.height())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    /// `None` for the open-ended last bin.
    pub hi: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFractions {
    pub threshold: f64,
    /// Share of faces larger than `threshold x threshold`; `None` for an
    /// empty split.
    pub above: Option<f64>,
    /// Share of faces smaller than `threshold x threshold`.
    pub below: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionStats {
    pub split: Difficulty,
    pub count: usize,
    pub histogram: Vec<HistogramBin>,
    pub fractions: Vec<ThresholdFractions>,
}

/// Per-split face-size histogram and threshold fractions. Splits are
/// cumulative as in [`Difficulty::includes`].
pub fn face_resolution_stats(ground_truths: &[GroundTruthRecord], thresholds: &[f64]) -> Vec<ResolutionStats> {
    Difficulty::ALL
        .iter()
        .map(|&split| {
            let sizes: Vec<f64> = ground_truths
                .iter()
                .filter(|g| split.includes(g.difficulty))
                .map(face_resolution)
                .collect();
            let histogram = if sizes.is_empty() {
                Vec::new()
            } else {
                HISTOGRAM_EDGES
                    .iter()
                    .enumerate()
                    .map(|(i, &lo)| {
                        let hi = HISTOGRAM_EDGES.get(i + 1).copied();
                        let count = sizes.iter().filter(|&&s| s >= lo && hi.is_none_or(|h| s < h)).count();
                        HistogramBin { lo, hi, count }
                    })
                    .collect()
            };
            let share = |pred: &dyn Fn(f64) -> bool| {
                (!sizes.is_empty()).then(|| sizes.iter().filter(|&&s| pred(s)).count() as f64 / sizes.len() as f64)
            };
            let fractions = thresholds
                .iter()
                .map(|&t| ThresholdFractions {
                    threshold: t,
                    above: share(&|s| s > t),
                    below: share(&|s| s < t),
                })
                .collect();
            ResolutionStats {
                split,
                count: sizes.len(),
                histogram,
                fractions,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidEntry {
    pub name: String,
    pub value: f64,
}

/// Everything an evaluation run produces. Empty sections are omitted from
/// the text form.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fid: Vec<FidEntry>,
    pub ap: Vec<SplitAp>,
    pub resolution: Vec<ResolutionStats>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{:.1}", v * 100.0))
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in &self.fid {
            let _ = writeln!(s, "FID {}: {:.6}", f.name, f.value);
        }
        if !self.ap.is_empty() {
            let _ = writeln!(s, "AP (%)      original  anonymized  ratio");
            for a in &self.ap {
                let ratio = a.ratio.map_or_else(|| "undefined".to_string(), |r| format!("{r:.4}"));
                let _ = writeln!(
                    s,
                    "{:<10} {:>9} {:>11}  {}",
                    a.split.name(),
                    pct(a.original),
                    pct(a.anonymized),
                    ratio
                );
            }
        }
        for r in &self.resolution {
            let _ = write!(s, "faces {} ({}):", r.split.name(), r.count);
            for f in &r.fractions {
                let _ = write!(s, " >{0}: {1}%, <{0}: {2}%;", f.threshold, pct(f.above), pct(f.below));
            }
            s.push('\n');
        }
        s
    }

    /// AP table with one row per detection set and one column per split,
    /// values in percent.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method");
        for a in &self.ap {
            s.push(',');
            s.push_str(a.split.name());
        }
        s.push('\n');
        type Pick = fn(&SplitAp) -> Option<f64>;
        let rows: [(&str, Pick); 2] = [("original", |a| a.original), ("anonymized", |a| a.anonymized)];
        for (name, pick) in rows {
            s.push_str(name);
            for a in &self.ap {
                s.push(',');
                if let Some(v) = pick(a) {
                    let _ = write!(s, "{:.2}", v * 100.0);
                }
            }
            s.push('\n');
        }
        s
    }
}

/// A row of the published face-detection AP comparison (percent).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceApRow {
    pub method: &'static str,
    pub easy: f64,
    pub medium: f64,
    pub hard: f64,
}

/// Published AP of a state-of-the-art face detector on the WIDER Face
/// validation set after each anonymization method.
///
/// Documentation only. These numbers come from a full-scale detector and
/// dataset that this crate does not ship, and they are not reproducible
/// here; nothing in the crate compares against them.
pub const REFERENCE_AP_TABLE: [ReferenceApRow; 7] = [
    ReferenceApRow { method: "No anonymization", easy: 96.6, medium: 95.7, hard: 90.4 },
    ReferenceApRow { method: "Blacked out", easy: 24.9, medium: 36.3, hard: 54.8 },
    ReferenceApRow { method: "Pixelation (16x16)", easy: 95.3, medium: 94.9, hard: 90.2 },
    ReferenceApRow { method: "Pixelation (8x8)", easy: 91.4, medium: 92.3, hard: 88.9 },
    ReferenceApRow { method: "9x9 Gaussian blur (sigma 3)", easy: 95.3, medium: 92.8, hard: 84.7 },
    ReferenceApRow { method: "Heavy blur (30% of face width)", easy: 83.4, medium: 86.3, hard: 86.1 },
    ReferenceApRow { method: "Generative", easy: 95.9, medium: 95.0, hard: 89.8 },
];

pub const REFERENCE_NOTE: &str = "reference values only; not reproducible with this crate";
