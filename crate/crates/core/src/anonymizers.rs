//! Face anonymizers: black-out, pixelation, Gaussian and box blur, and the
//! generative anonymizer.
//!
//! Images are `[C, H, W]` tensors on the 0..=255 scale. The baselines work
//! on the pixels covered by the tight face box (see
//! [`BoundingBox::pixel_rect`]) and never write outside it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotations::{to_crop_frame, BoundingBox, FaceAnnotation, PixelRect};
use crate::autograd::{no_grad, Var};
use crate::error::{Error, Result};
use crate::generator::{Generator, GrowthState, PosePyramid};
use crate::preprocess::{denormalize, generator_input, mask_faces_in_image, paste_back, CropSpec};
use crate::tensor::Tensor;

fn dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match image.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::shape(format!("expected a [C, H, W] image, got {s:?}"))),
    }
}

/// Apply `f` to every channel's face region, given as a row-major
/// `width x height` buffer, and write the result back.
fn map_region(image: &Tensor, rect: Option<PixelRect>, mut f: impl FnMut(&[f32], usize, usize) -> Vec<f32>) -> Result<Tensor> {
    let (c, h, w) = dims(image)?;
    let mut out = image.clone();
    let Some(r) = rect else { return Ok(out) };
    let (rw, rh) = (r.width(), r.height());
    let mut region = vec![0.0; rw * rh];
    for ch in 0..c {
        for y in 0..rh {
            let src = (ch * h + r.y0 + y) * w + r.x0;
            region[y * rw..(y + 1) * rw].copy_from_slice(&image.data()[src..src + rw]);
        }
        let done = f(&region, rw, rh);
        for y in 0..rh {
            let dst = (ch * h + r.y0 + y) * w + r.x0;
            out.data_mut()[dst..dst + rw].copy_from_slice(&done[y * rw..(y + 1) * rw]);
        }
    }
    Ok(out)
}

fn face_rect(image: &Tensor, b: &BoundingBox) -> Result<Option<PixelRect>> {
    let (_, h, w) = dims(image)?;
    Ok(b.pixel_rect(w, h))
}

/// Set the face pixels to zero.
pub fn black_out(image: &Tensor, b: &BoundingBox) -> Result<Tensor> {
    map_region(image, face_rect(image, b)?, |r, _, _| vec![0.0; r.len()])
}

/// Block boundaries splitting `len` pixels into `n` near-equal parts.
fn block_edges(len: usize, n: usize) -> Vec<usize> {
    let n = n.min(len);
    (0..=n).map(|i| i * len / n).collect()
}

/// Average the face region over an `n x n` grid of blocks and fill each
/// block with its mean. Regions narrower than `n` keep one pixel per block.
pub fn pixelate(image: &Tensor, b: &BoundingBox, n: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::invalid("pixelation grid must be at least 1x1"));
    }
    map_region(image, face_rect(image, b)?, |region, w, h| {
        let (xs, ys) = (block_edges(w, n), block_edges(h, n));
        let mut out = vec![0.0; region.len()];
        for by in ys.windows(2) {
            for bx in xs.windows(2) {
                let mut sum = 0.0f64;
                for y in by[0]..by[1] {
                    for x in bx[0]..bx[1] {
                        sum += region[y * w + x] as f64;
                    }
                }
                let mean = (sum / ((by[1] - by[0]) * (bx[1] - bx[0])) as f64) as f32;
                for y in by[0]..by[1] {
                    out[y * w + bx[0]..y * w + bx[1]].fill(mean);
                }
            }
        }
        out
    })
}

/// Reflect an index into `[0, len)` without repeating the edge pixel
/// (`-1 -> 1`, `len -> len - 2`).
pub fn reflect_101(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m < len as isize { m } else { period - m }) as usize
}

/// Normalized 1-D Gaussian weights.
pub fn gaussian_kernel_1d(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable convolution of a region with reflect-101 edges inside it.
fn separable(region: &[f32], w: usize, h: usize, kx: &[f64], ky: &[f64]) -> Vec<f32> {
    let (rx, ry) = ((kx.len() / 2) as isize, (ky.len() / 2) as isize);
    let mut tmp = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kx
                .iter()
                .enumerate()
                .map(|(k, &wt)| wt * region[y * w + reflect_101(x as isize + k as isize - rx, w)] as f64)
                .sum();
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = ky
                .iter()
                .enumerate()
                .map(|(k, &wt)| wt * tmp[reflect_101(y as isize + k as isize - ry, h) * w + x])
                .sum::<f64>() as f32;
        }
    }
    out
}

/// Gaussian blur of the face region with a `kernel x kernel` normalized
/// kernel; edges reflect inside the region.
pub fn gaussian_blur(image: &Tensor, b: &BoundingBox, kernel: usize, sigma: f64) -> Result<Tensor> {
    if kernel.is_multiple_of(2) || !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "Gaussian blur needs an odd kernel and positive sigma, got {kernel} and {sigma}"
        )));
    }
    let k = gaussian_kernel_1d(kernel, sigma);
    map_region(image, face_rect(image, b)?, |r, w, h| separable(r, w, h, &k, &k))
}

/// Box-filter side for a face `width` pixels wide: 30% of the width,
/// rounded, then made odd by stepping down; at least 1.
pub fn heavy_blur_size(width: f64) -> usize {
    let s = (0.3 * width).round().max(1.0) as usize;
    if s.is_multiple_of(2) {
        s - 1
    } else {
        s
    }
}

/// Mean filter over the face region with side [`heavy_blur_size`].
pub fn heavy_blur(image: &Tensor, b: &BoundingBox) -> Result<Tensor> {
    let size = heavy_blur_size(b.width());
    let k = vec![1.0 / size as f64; size];
    map_region(image, face_rect(image, b)?, |r, w, h| separable(r, w, h, &k, &k))
}

/// Result of generative anonymization of one image.
#[derive(Clone, Debug)]
pub struct Anonymized {
    pub image: Tensor,
    /// Faces left untouched, by annotation index, with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// Replace every annotated face with generator output.
///
/// All face boxes are masked in the image before any crop is taken. Faces
/// run from the largest box to the smallest and are pasted in that order,
/// so where boxes overlap the smaller face wins. A face whose crop cannot
/// be built is skipped and reported.
pub fn deep_anonymize(image: &Tensor, faces: &[FaceAnnotation], generator: &Generator) -> Result<Anonymized> {
    let (c, h, w) = dims(image)?;
    if c != 3 {
        return Err(Error::shape(format!("expected an RGB image, got {c} channels")));
    }
    let m = generator.resolution();
    let state = GrowthState::stable(m);
    let boxes: Vec<BoundingBox> = faces.iter().map(|f| f.bbox).collect();
    let mut context = mask_faces_in_image(image, &boxes)?;
    let mut out = image.clone();
    let mut order: Vec<usize> = (0..faces.len()).collect();
    order.sort_by(|&a, &b| boxes[b].area().total_cmp(&boxes[a].area()).then(a.cmp(&b)));
    let mut levels = Vec::new();
    let mut r = generator.config().base_resolution;
    while r <= m {
        levels.push(r);
        r *= 2;
    }
    let mut skipped = Vec::new();
    for i in order {
        let spec = match CropSpec::new(&faces[i].bbox, w, h, m) {
            Ok(s) => s,
            Err(e) => {
                skipped.push((i, e.to_string()));
                continue;
            }
        };
        let input = generator_input(&context, &spec)?.reshape(&[1, 3, m, m])?;
        let points = to_crop_frame(&faces[i].keypoints, &spec.source_box, m);
        let pose = PosePyramid::from_keypoints(&[points], m, &levels);
        let fake = no_grad(|| generator.forward(&Var::constant(input), &pose, &state))?;
        let face = denormalize(&fake.value().reshape(&[3, m, m])?);
        out = paste_back(&out, &face, &spec)?;
        context = paste_back(&context, &face, &spec)?;
    }
    Ok(Anonymized { image: out, skipped })
}

/// Every anonymization method, by its command-line name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Generative,
    Blackout,
    Pixelate16,
    Pixelate8,
    Blur9s3,
    Heavyblur,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Generative,
        Method::Blackout,
        Method::Pixelate16,
        Method::Pixelate8,
        Method::Blur9s3,
        Method::Heavyblur,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Generative => "generative",
            Method::Blackout => "blackout",
            Method::Pixelate16 => "pixelate16",
            Method::Pixelate8 => "pixelate8",
            Method::Blur9s3 => "blur9s3",
            Method::Heavyblur => "heavyblur",
        }
    }

    pub fn needs_generator(self) -> bool {
        self == Method::Generative
    }

    /// Anonymize every face in `image`. `generator` is required for
    /// [`Method::Generative`] and ignored otherwise.
    pub fn apply(self, image: &Tensor, faces: &[FaceAnnotation], generator: Option<&Generator>) -> Result<Anonymized> {
        if self == Method::Generative {
            let g = generator.ok_or_else(|| Error::invalid("generative anonymization needs a generator"))?;
            return deep_anonymize(image, faces, g);
        }
        let mut out = image.clone();
        for f in faces {
            out = match self {
                Method::Blackout => black_out(&out, &f.bbox)?,
                Method::Pixelate16 => pixelate(&out, &f.bbox, 16)?,
                Method::Pixelate8 => pixelate(&out, &f.bbox, 8)?,
                Method::Blur9s3 => gaussian_blur(&out, &f.bbox, 9, 3.0)?,
                Method::Heavyblur => heavy_blur(&out, &f.bbox)?,
                Method::Generative => unreachable!(),
            };
        }
        Ok(Anonymized {
            image: out,
            skipped: Vec::new(),
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown anonymization method {s:?}")))
    }
}
