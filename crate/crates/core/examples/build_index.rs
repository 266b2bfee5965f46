//! Pair keypoint detections with face boxes and keep the large faces.
//!
//! cargo run --example build_index

use faceanon::annotations::{build_index, BoundingBox, KeypointSet, Point, RawBoxRecord, RawKeypointRecord, NUM_KEYPOINTS};

fn keypoints(cx: f64, cy: f64, s: f64) -> KeypointSet {
    let mut pts = [None; NUM_KEYPOINTS];
    pts[0] = Some(Point::new(cx - 0.2 * s, cy - 0.1 * s));
    pts[1] = Some(Point::new(cx + 0.2 * s, cy - 0.1 * s));
    pts[2] = Some(Point::new(cx, cy + 0.05 * s));
    pts[3] = Some(Point::new(cx, cy + 0.25 * s));
    KeypointSet::new(pts, 0.9).expect("valid keypoints")
}

fn main() -> faceanon::Result<()> {
    let faces = [("street.png", 40.0, 40.0, 180.0), ("street.png", 400.0, 60.0, 60.0), ("crowd.png", 100.0, 100.0, 300.0)];
    let mut boxes = Vec::new();
    let mut kps = Vec::new();
    for (image, x, y, s) in faces {
        boxes.push(RawBoxRecord {
            image: image.into(),
            bbox: BoundingBox::new(x, y, x + s, y + s)?,
        });
        kps.push(RawKeypointRecord {
            image: image.into(),
            keypoints: keypoints(x + s / 2.0, y + s / 2.0, s),
        });
    }
    // A keypoint detection with no box is dropped by the matcher.
    kps.push(RawKeypointRecord {
        image: "crowd.png".into(),
        keypoints: keypoints(900.0, 900.0, 50.0),
    });
    for entry in build_index(&kps, &boxes, 128.0) {
        println!("{}", serde_json::to_string(&entry)?);
    }
    Ok(())
}
