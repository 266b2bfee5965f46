//! Fréchet distance on embedded images, detection AP before and after
//! anonymization, and face-size statistics.

pub mod ap;
pub mod desk;
pub mod embed;
pub mod fid;
pub mod report;

pub use ap::{
    ap_degradation_report, average_precision, iou, match_detections, DetectionRecord, Difficulty, GroundTruthRecord,
    SplitAp, DEFAULT_IOU_THRESHOLD,
};
pub use desk::{anonymized_crops, composite, desk_fid};
pub use embed::{embedded_stats, Embedder, RandomConvEmbedder, DEFAULT_EMBEDDER_SEED};
pub use fid::{feature_stats, frechet_distance, FeatureStats, StatsAccumulator};
pub use report::{face_resolution_stats, EvalReport, FidEntry, ResolutionStats, REFERENCE_AP_TABLE};
