//! FID between rendered faces and their pixelated versions, and an AP
//! degradation report for a detector that loses its low-confidence hits.
//!
//! cargo run --release --example evaluate

use faceanon::annotations::BoundingBox;
use faceanon::anonymizers::pixelate;
use faceanon::data::FaceDataset;
use faceanon::evaluation::report::DEFAULT_RESOLUTION_THRESHOLDS;
use faceanon::evaluation::{
    ap_degradation_report, embedded_stats, face_resolution_stats, frechet_distance, DetectionRecord, Difficulty,
    EvalReport, FidEntry, GroundTruthRecord, RandomConvEmbedder, DEFAULT_IOU_THRESHOLD,
};
use faceanon::preprocess::normalize_u8;
use faceanon::tensor::Tensor;

fn main() -> faceanon::Result<()> {
    let ds = FaceDataset::synthetic(500, 32, 11)?;
    let embedder = RandomConvEmbedder::default();
    let stats = |pixelated: bool| {
        embedded_stats(&embedder, ds.len(), 50, |r| {
            let crops = ds.samples()[r]
                .iter()
                .map(|s| {
                    let img = if pixelated { pixelate(&s.crop, &s.face_box, 4)? } else { s.crop.clone() };
                    normalize_u8(&img)
                })
                .collect::<faceanon::Result<Vec<_>>>()?;
            Tensor::stack(&crops)
        })
    };
    let real = stats(false)?;
    let fid = frechet_distance(&real, &stats(true)?)?;

    let mut gts = Vec::new();
    let mut original = Vec::new();
    let mut anonymized = Vec::new();
    for i in 0..30 {
        let side = 6.0 + 2.0 * i as f64;
        let b = BoundingBox::new(0.0, 0.0, side, side)?;
        let difficulty = Difficulty::ALL[i % 3];
        let image = format!("img{i}");
        let confidence = 0.3 + 0.02 * i as f64;
        gts.push(GroundTruthRecord { image: image.clone(), bbox: b, difficulty });
        original.push(DetectionRecord::new(image.clone(), b, confidence)?);
        if confidence > 0.5 {
            anonymized.push(DetectionRecord::new(image, b, confidence)?);
        }
    }
    let report = EvalReport {
        fid: vec![FidEntry {
            name: "real vs pixelated 4x4".into(),
            value: fid,
        }],
        ap: ap_degradation_report(&original, &anonymized, &gts, &Difficulty::ALL, DEFAULT_IOU_THRESHOLD)?,
        resolution: face_resolution_stats(&gts, &DEFAULT_RESOLUTION_THRESHOLDS),
    };
    print!("{}", report.to_text());
    println!("{}", report.to_csv());
    Ok(())
}
