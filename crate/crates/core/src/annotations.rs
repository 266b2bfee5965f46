//! Face boxes, the seven-point sparse pose, matching of keypoint detections
//! to box detections, and coordinate bookkeeping between the image frame and
//! square crop frames.

use std::cmp::Ordering;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRecord", into = "BoxRecord")]
pub struct BoundingBox {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    confidence: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRecord {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    #[serde(default = "one")]
    confidence: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<BoxRecord> for BoundingBox {
    type Error = Error;
    fn try_from(r: BoxRecord) -> Result<Self> {
        BoundingBox::with_confidence(r.x0, r.y0, r.x1, r.y1, r.confidence)
    }
}

impl From<BoundingBox> for BoxRecord {
    fn from(b: BoundingBox) -> Self {
        BoxRecord {
            x0: b.x0,
            y0: b.y0,
            x1: b.x1,
            y1: b.y1,
            confidence: b.confidence,
        }
    }
}

/// Half-open integer pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::with_confidence(x0, y0, x1, y1, 1.0)
    }

    pub fn with_confidence(x0: f64, y0: f64, x1: f64, y1: f64, confidence: f64) -> Result<Self> {
        if ![x0, y0, x1, y1, confidence].iter().all(|v| v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite box ({x0}, {y0})-({x1}, {y1}) conf {confidence}"
            )));
        }
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::Data(format!("degenerate box ({x0}, {y0})-({x1}, {y1})")));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Data(format!("box confidence {confidence} outside [0, 1]")));
        }
        Ok(BoundingBox {
            x0,
            y0,
            x1,
            y1,
            confidence,
        })
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn y0(&self) -> f64 {
        self.y0
    }
    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn confidence(&self) -> f64 {
        self.confidence
    }
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }
    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
    pub fn center(&self) -> Point {
        Point::new((self.x0 + self.x1) * 0.5, (self.y0 + self.y1) * 0.5)
    }

    /// Closed-interval containment.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    /// Pixels of a `width x height` raster whose area overlaps the box.
    /// `None` when no pixel does.
    pub fn pixel_rect(&self, width: usize, height: usize) -> Option<PixelRect> {
        let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
        let r = PixelRect {
            x0: clamp(self.x0.floor(), width),
            y0: clamp(self.y0.floor(), height),
            x1: clamp(self.x1.ceil(), width),
            y1: clamp(self.y1.ceil(), height),
        };
        (r.x0 < r.x1 && r.y0 < r.y1).then_some(r)
    }

    pub fn intersects(&self, width: f64, height: f64) -> bool {
        self.x1 > 0.0 && self.y1 > 0.0 && self.x0 < width && self.y0 < height
    }
}

/// The seven pose keypoints, in channel order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Keypoint {
    Nose = 0,
    LeftEye = 1,
    RightEye = 2,
    LeftEar = 3,
    RightEar = 4,
    LeftShoulder = 5,
    RightShoulder = 6,
}

pub const NUM_KEYPOINTS: usize = 7;

impl Keypoint {
    pub const ALL: [Keypoint; NUM_KEYPOINTS] = [
        Keypoint::Nose,
        Keypoint::LeftEye,
        Keypoint::RightEye,
        Keypoint::LeftEar,
        Keypoint::RightEar,
        Keypoint::LeftShoulder,
        Keypoint::RightShoulder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Keypoint::Nose => "nose",
            Keypoint::LeftEye => "left_eye",
            Keypoint::RightEye => "right_eye",
            Keypoint::LeftEar => "left_ear",
            Keypoint::RightEar => "right_ear",
            Keypoint::LeftShoulder => "left_shoulder",
            Keypoint::RightShoulder => "right_shoulder",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KeypointRecord", into = "KeypointRecord")]
pub struct KeypointSet {
    points: [Option<Point>; NUM_KEYPOINTS],
    confidence: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeypointRecord {
    points: Vec<Option<[f64; 2]>>,
    #[serde(default = "one")]
    confidence: f64,
}

impl TryFrom<KeypointRecord> for KeypointSet {
    type Error = Error;
    fn try_from(r: KeypointRecord) -> Result<Self> {
        if r.points.len() != NUM_KEYPOINTS {
            return Err(Error::Data(format!(
                "expected {} keypoint slots, got {}",
                NUM_KEYPOINTS,
                r.points.len()
            )));
        }
        let mut points = [None; NUM_KEYPOINTS];
        for (slot, p) in points.iter_mut().zip(&r.points) {
            *slot = p.map(|[x, y]| Point::new(x, y));
        }
        KeypointSet::new(points, r.confidence)
    }
}

impl From<KeypointSet> for KeypointRecord {
    fn from(k: KeypointSet) -> Self {
        KeypointRecord {
            points: k.points.iter().map(|p| p.map(|p| [p.x, p.y])).collect(),
            confidence: k.confidence,
        }
    }
}

impl KeypointSet {
    pub fn new(points: [Option<Point>; NUM_KEYPOINTS], confidence: f64) -> Result<Self> {
        for p in points.iter().flatten() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::Data(format!("non-finite keypoint ({}, {})", p.x, p.y)));
            }
        }
        if !(confidence.is_finite() && (0.0..=1.0).contains(&confidence)) {
            return Err(Error::Data(format!("keypoint confidence {confidence} outside [0, 1]")));
        }
        Ok(KeypointSet { points, confidence })
    }

    pub fn empty() -> Self {
        KeypointSet {
            points: [None; NUM_KEYPOINTS],
            confidence: 0.0,
        }
    }

    pub fn get(&self, k: Keypoint) -> Option<Point> {
        self.points[k as usize]
    }

    pub fn points(&self) -> &[Option<Point>; NUM_KEYPOINTS] {
        &self.points
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn present_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }

    /// Every point multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> KeypointSet {
        let mut out = *self;
        for p in out.points.iter_mut().flatten() {
            p.x *= factor;
            p.y *= factor;
        }
        out
    }

    /// The eye/nose predicate used for matching: every present eye or nose
    /// point lies inside the box, and at least one of them is present.
    pub fn face_points_inside(&self, b: &BoundingBox) -> bool {
        let face = [Keypoint::Nose, Keypoint::LeftEye, Keypoint::RightEye];
        let present: Vec<Point> = face.iter().filter_map(|&k| self.get(k)).collect();
        !present.is_empty() && present.iter().all(|&p| b.contains(p))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceAnnotation {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub keypoints: KeypointSet,
}

/// Pair keypoint detections with box detections one-to-one.
///
/// Candidate pairs pass [`KeypointSet::face_points_inside`]; they are taken
/// in descending order of `box.confidence + keypoints.confidence` (ties:
/// lower box index, then lower keypoint index) whenever neither side has
/// been used yet.
pub fn greedy_match(keypoint_sets: &[KeypointSet], boxes: &[BoundingBox]) -> Vec<FaceAnnotation> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (bi, b) in boxes.iter().enumerate() {
        for (ki, k) in keypoint_sets.iter().enumerate() {
            if k.face_points_inside(b) {
                candidates.push((b.confidence + k.confidence, bi, ki));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut box_used = vec![false; boxes.len()];
    let mut kp_used = vec![false; keypoint_sets.len()];
    let mut out = Vec::new();
    for (_, bi, ki) in candidates {
        if box_used[bi] || kp_used[ki] {
            continue;
        }
        box_used[bi] = true;
        kp_used[ki] = true;
        out.push(FaceAnnotation {
            bbox: boxes[bi],
            keypoints: keypoint_sets[ki],
        });
    }
    out
}

/// Smallest square around `b`, shifted (never shrunk) to lie inside the
/// image. The side is clamped to the shorter image side when the square
/// cannot fit at all.
pub fn square_expand(b: &BoundingBox, image_w: usize, image_h: usize) -> Result<BoundingBox> {
    if image_w == 0 || image_h == 0 {
        return Err(Error::invalid("empty image"));
    }
    let (w, h) = (image_w as f64, image_h as f64);
    if !b.intersects(w, h) {
        return Err(Error::Data(format!(
            "box ({}, {})-({}, {}) does not intersect the {}x{} image",
            b.x0, b.y0, b.x1, b.y1, image_w, image_h
        )));
    }
    let side = b.width().max(b.height()).min(w.min(h));
    let c = b.center();
    let place = |center: f64, limit: f64| {
        let mut lo = center - side * 0.5;
        if lo < 0.0 {
            lo = 0.0;
        }
        if lo + side > limit {
            lo = limit - side;
        }
        lo
    };
    let x0 = place(c.x, w);
    let y0 = place(c.y, h);
    BoundingBox::with_confidence(x0, y0, x0 + side, y0 + side, b.confidence)
}

/// Map image-frame points into the `m x m` frame of a square `crop`.
/// Points landing outside `[0, m)` become absent.
pub fn to_crop_frame(points: &KeypointSet, crop: &BoundingBox, m: usize) -> KeypointSet {
    let (sx, sy) = (m as f64 / crop.width(), m as f64 / crop.height());
    let mut out = *points;
    for slot in out.points.iter_mut() {
        *slot = slot.and_then(|p| {
            let q = Point::new((p.x - crop.x0) * sx, (p.y - crop.y0) * sy);
            let inside = (0.0..m as f64).contains(&q.x) && (0.0..m as f64).contains(&q.y);
            inside.then_some(q)
        });
    }
    out
}

/// Inverse of [`to_crop_frame`] for points that survived the mapping.
pub fn from_crop_frame(points: &KeypointSet, crop: &BoundingBox, m: usize) -> KeypointSet {
    let (sx, sy) = (crop.width() / m as f64, crop.height() / m as f64);
    let mut out = *points;
    for p in out.points.iter_mut().flatten() {
        *p = Point::new(crop.x0 + p.x * sx, crop.y0 + p.y * sy);
    }
    out
}

/// Map a box into a crop frame (no clipping).
pub fn box_to_crop_frame(b: &BoundingBox, crop: &BoundingBox, m: usize) -> Result<BoundingBox> {
    let (sx, sy) = (m as f64 / crop.width(), m as f64 / crop.height());
    BoundingBox::with_confidence(
        (b.x0 - crop.x0) * sx,
        (b.y0 - crop.y0) * sy,
        (b.x1 - crop.x0) * sx,
        (b.y1 - crop.y0) * sy,
        b.confidence,
    )
}

/// `[7, m, m]` one-hot pose image: channel `k` holds a single 1 at
/// `(floor(y), floor(x))` when keypoint `k` is present.
pub fn one_hot_pose(points: &KeypointSet, m: usize) -> Tensor {
    let mut t = Tensor::zeros(&[NUM_KEYPOINTS, m, m]);
    for (k, p) in points.points.iter().enumerate() {
        let Some(p) = p else { continue };
        let (x, y) = (p.x.floor(), p.y.floor());
        if x >= 0.0 && y >= 0.0 && x < m as f64 && y < m as f64 {
            t.data_mut()[(k * m + y as usize) * m + x as usize] = 1.0;
        }
    }
    t
}

/// One-hot pose images for a batch, `[N, 7, r, r]`, from points given in an
/// `m x m` crop frame.
pub fn pose_batch(points: &[KeypointSet], m: usize, r: usize) -> Tensor {
    let factor = r as f64 / m as f64;
    let items: Vec<Tensor> = points.iter().map(|k| one_hot_pose(&k.scaled(factor), r)).collect();
    if items.is_empty() {
        return Tensor::zeros(&[0, NUM_KEYPOINTS, r, r]);
    }
    Tensor::stack(&items).expect("pose images share one shape")
}

/// One record of a dataset index: an image path and its annotated faces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub image: String,
    pub faces: Vec<FaceAnnotation>,
}

/// A raw face-detector output line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBoxRecord {
    pub image: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// A raw keypoint-detector output line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawKeypointRecord {
    pub image: String,
    pub keypoints: KeypointSet,
}

/// Parse a JSON-lines file. Blank lines are skipped; every malformed line is
/// reported with its 1-based line number.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            Err(e) => errors.push(format!("line {}: {}", i + 1, e)),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Data(format!(
            "{}: {} unparsable record(s)\n{}",
            path.display(),
            errors.len(),
            errors.join("\n")
        )));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Default minimum face size, in pixels, for a dataset index.
pub const MIN_INDEX_RESOLUTION: f64 = 128.0;

/// Group raw detections by image, match keypoints to boxes within each
/// image, and keep faces whose longer box side is at least
/// `min_resolution`. Images come out in name order; images left without
/// faces are dropped.
pub fn build_index(
    keypoints: &[RawKeypointRecord],
    boxes: &[RawBoxRecord],
    min_resolution: f64,
) -> Vec<IndexEntry> {
    let mut per_image: std::collections::BTreeMap<&str, (Vec<KeypointSet>, Vec<BoundingBox>)> =
        std::collections::BTreeMap::new();
    for k in keypoints {
        per_image.entry(&k.image).or_default().0.push(k.keypoints);
    }
    for b in boxes {
        per_image.entry(&b.image).or_default().1.push(b.bbox);
    }
    per_image
        .into_iter()
        .filter_map(|(image, (kps, bxs))| {
            let faces: Vec<FaceAnnotation> = greedy_match(&kps, &bxs)
                .into_iter()
                .filter(|f| f.bbox.width().max(f.bbox.height()) >= min_resolution)
                .collect();
            (!faces.is_empty()).then(|| IndexEntry {
                image: image.to_string(),
                faces,
            })
        })
        .collect()
}
