//! Training data: face crops with their face box and keypoints in the crop
//! frame, either rendered procedurally or cut from indexed images.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{pose_batch, read_jsonl, to_crop_frame, BoundingBox, IndexEntry, KeypointSet, Point};
use crate::error::{Error, Result};
use crate::image_io;
use crate::preprocess::{crop_resize, mask_face, normalize_u8, CropSpec};
use crate::tensor::{kernels, Tensor};

/// One `[3, M, M]` crop (0..=255) with annotations in its own frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceSample {
    pub crop: Tensor,
    pub face_box: BoundingBox,
    pub keypoints: KeypointSet,
}

/// A training batch at one resolution, values in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub real: Tensor,
    pub condition: Tensor,
    pub keypoints: Vec<KeypointSet>,
    pub resolution: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct FaceDataset {
    resolution: usize,
    samples: Vec<FaceSample>,
    real: Vec<Tensor>,
    condition: Vec<Tensor>,
}

impl FaceDataset {
    pub fn new(resolution: usize, samples: Vec<FaceSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        let mut real = Vec::with_capacity(samples.len());
        let mut condition = Vec::with_capacity(samples.len());
        for s in &samples {
            if s.crop.shape() != [3, resolution, resolution] {
                return Err(Error::shape(format!(
                    "crop {:?} in a {resolution}x{resolution} dataset",
                    s.crop.shape()
                )));
            }
            real.push(normalize_u8(&s.crop)?);
            condition.push(normalize_u8(&mask_face(&s.crop, &s.face_box)?)?);
        }
        Ok(FaceDataset {
            resolution,
            samples,
            real,
            condition,
        })
    }

    /// Procedural face-like crops; see [`render_toy_face`].
    pub fn synthetic(count: usize, resolution: usize, seed: u64) -> Result<Self> {
        if resolution < 8 {
            return Err(Error::invalid("synthetic crops need at least 8x8 pixels"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..count).map(|_| render_toy_face(resolution, &mut rng)).collect();
        Self::new(resolution, samples)
    }

    /// Crops cut from the images of a dataset index.
    pub fn from_index(index: &Path, image_root: &Path, resolution: usize) -> Result<Self> {
        let entries: Vec<IndexEntry> = read_jsonl(index)?;
        let mut samples = Vec::new();
        for entry in &entries {
            let image = image_io::load_rgb(&image_root.join(&entry.image))?;
            let (h, w) = (image.shape()[1], image.shape()[2]);
            for face in &entry.faces {
                let spec = CropSpec::new(&face.bbox, w, h, resolution)?;
                samples.push(FaceSample {
                    crop: crop_resize(&image, &spec)?,
                    face_box: spec.face_box_in_crop,
                    keypoints: to_crop_frame(&face.keypoints, &spec.source_box, resolution),
                });
            }
        }
        Self::new(resolution, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn samples(&self) -> &[FaceSample] {
        &self.samples
    }

    /// Assemble the samples at `indices`, average-pooled to `resolution`.
    /// The condition is masked at full resolution before pooling, so no face
    /// pixel reaches it.
    pub fn batch(&self, indices: &[usize], resolution: usize) -> Result<Batch> {
        let factor = self.resolution / resolution.max(1);
        if resolution == 0 || factor * resolution != self.resolution || !factor.is_power_of_two() {
            return Err(Error::invalid(format!(
                "cannot pool {0}x{0} crops to {1}x{1}",
                self.resolution, resolution
            )));
        }
        let pick = |set: &[Tensor]| -> Result<Tensor> {
            let items: Vec<Tensor> = indices
                .iter()
                .map(|&i| {
                    set.get(i)
                        .cloned()
                        .ok_or_else(|| Error::invalid(format!("sample index {i} out of range")))
                })
                .collect::<Result<_>>()?;
            let mut t = Tensor::stack(&items)?;
            let mut r = self.resolution;
            while r > resolution {
                t = kernels::downsample_avg2x(&t)?;
                r /= 2;
            }
            Ok(t)
        };
        Ok(Batch {
            real: pick(&self.real)?,
            condition: pick(&self.condition)?,
            keypoints: indices.iter().map(|&i| self.samples[i].keypoints).collect(),
            resolution,
        })
    }

    /// `[N, 7, r, r]` pose images of `batch` at resolution `r`.
    pub fn pose(&self, batch: &Batch, r: usize) -> Tensor {
        pose_batch(&batch.keypoints, self.resolution, r)
    }
}

/// Settings for the procedural dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub count: usize,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            count: 2000,
            resolution: 32,
            seed: 7,
        }
    }
}

fn coverage(signed_distance: f64) -> f64 {
    (0.5 - signed_distance).clamp(0.0, 1.0)
}

fn blend(px: &mut [f64; 3], color: [f64; 3], amount: f64) {
    for c in 0..3 {
        px[c] += (color[c] - px[c]) * amount;
    }
}

fn random_color(rng: &mut impl Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

/// Random layout of one procedural face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyFace {
    pub background: [f64; 3],
    pub gradient: [f64; 2],
    pub shirt: [f64; 3],
    pub skin_tone: f64,
    pub hair: [f64; 3],
    /// Head rotation in `[-1, 1]`.
    pub yaw: f64,
    pub center: Point,
    pub width: f64,
    pub height: f64,
}

impl ToyFace {
    /// Draw a layout for a 32x32 frame.
    pub fn random(rng: &mut impl Rng) -> Self {
        ToyFace {
            background: random_color(rng, 40.0, 220.0),
            gradient: [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
            shirt: random_color(rng, 20.0, 235.0),
            skin_tone: rng.random_range(0.0..1.0),
            hair: random_color(rng, 10.0, 120.0),
            yaw: rng.random_range(-1.0..1.0),
            center: Point::new(16.0 + rng.random_range(-1.5..1.5), 13.0 + rng.random_range(-1.5..1.5)),
            width: rng.random_range(14.0..18.0),
            height: rng.random_range(15.0..19.0),
        }
    }
}

/// Render one random face-like crop; see [`render_layout`].
pub fn render_toy_face(m: usize, rng: &mut impl Rng) -> FaceSample {
    render_layout(&ToyFace::random(rng), m)
}

/// Render a layout at `m x m`.
///
/// The yaw shifts the eyes, nose and mouth sideways and decides which ears
/// are visible. Everything that depends on it is drawn inside the face box;
/// the background, torso and shoulders do not. Once the box is masked only
/// the keypoints tell the yaw.
pub fn render_layout(face: &ToyFace, m: usize) -> FaceSample {
    let s = m as f64 / 32.0;
    let (bg, grad, shirt, hair, yaw) = (face.background, face.gradient, face.shirt, face.hair, face.yaw);
    let skin = [
        120.0 + 110.0 * face.skin_tone,
        80.0 + 100.0 * face.skin_tone,
        60.0 + 90.0 * face.skin_tone,
    ];
    let (cx, cy) = (face.center.x * s, face.center.y * s);
    let (bw, bh) = (face.width * s, face.height * s);
    let face_box = BoundingBox::new(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0)
        .expect("positive extent");

    let eye_gap = 3.2 * s * (1.0 - 0.35 * yaw.abs());
    let eye_y = cy - 0.5 * s;
    let left_eye = Point::new(cx + 3.5 * yaw * s + eye_gap, eye_y);
    let right_eye = Point::new(cx + 3.5 * yaw * s - eye_gap, eye_y);
    let nose = Point::new(cx + 5.0 * yaw * s, cy + 2.5 * s);
    let mouth = Point::new(cx + 4.0 * yaw * s, cy + 5.5 * s);
    let left_ear = (yaw > -0.6).then(|| Point::new(cx + 0.45 * bw - 1.5 * yaw.max(0.0) * s, cy + 0.5 * s));
    let right_ear = (yaw < 0.6).then(|| Point::new(cx - 0.45 * bw + 1.5 * (-yaw).max(0.0) * s, cy + 0.5 * s));
    let shoulder_y = (cy + 12.0 * s).min(m as f64 - 1.0);
    let left_shoulder = Point::new(cx + 9.0 * s, shoulder_y);
    let right_shoulder = Point::new(cx - 9.0 * s, shoulder_y);

    let rect = face_box.pixel_rect(m, m).expect("face box inside the crop");
    let head_c = Point::new(cx + 1.5 * yaw * s, cy + 1.0 * s);
    let (head_rx, head_ry) = (0.42 * bw, 0.45 * bh);
    let feature = [25.0, 20.0, 20.0];

    let mut crop = Tensor::zeros(&[3, m, m]);
    for y in 0..m {
        for x in 0..m {
            let p = Point::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = bg[c] + grad[0] * (p.x - 16.0 * s) / s + grad[1] * (p.y - 16.0 * s) / s;
            }
            // Torso: a rounded block under the head.
            let torso_top = cy + 9.0 * s;
            let torso_dx = ((p.x - cx).abs() - 11.0 * s).max(0.0);
            blend(&mut px, shirt, coverage(torso_top - p.y) * coverage(torso_dx));

            if rect.contains(x, y) {
                px = hair;
                let d = (((p.x - head_c.x) / head_rx).powi(2) + ((p.y - head_c.y) / head_ry).powi(2)).sqrt();
                blend(&mut px, skin, coverage((d - 1.0) * head_rx.min(head_ry)));
                for e in [left_eye, right_eye] {
                    let d = ((p.x - e.x).powi(2) + (p.y - e.y).powi(2)).sqrt();
                    blend(&mut px, feature, coverage(d - 1.2 * s));
                }
                let nose_col = [skin[0] * 0.7, skin[1] * 0.6, skin[2] * 0.6];
                let d = ((p.x - nose.x).powi(2) + (p.y - nose.y).powi(2)).sqrt();
                blend(&mut px, nose_col, coverage(d - 1.0 * s));
                let d = ((p.x - mouth.x).abs() - 2.0 * s).max((p.y - mouth.y).abs() - 0.5 * s);
                blend(&mut px, [150.0, 40.0, 50.0], coverage(d));
            }
            for c in 0..3 {
                crop.data_mut()[(c * m + y) * m + x] = px[c].round().clamp(0.0, 255.0) as f32;
            }
        }
    }
    let keypoints = KeypointSet::new(
        [
            Some(nose),
            Some(left_eye),
            Some(right_eye),
            left_ear,
            right_ear,
            Some(left_shoulder),
            Some(right_shoulder),
        ],
        1.0,
    )
    .expect("finite keypoints");
    FaceSample {
        crop,
        face_box,
        keypoints,
    }
}
