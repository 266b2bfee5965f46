//! Input pipeline for the generator: square crop, bilinear resize, masking of
//! the face region, value normalization, and the inverse paste-back.
//!
//! Images are `[3, H, W]` tensors holding 8-bit values as `f32` in
//! `[0, 255]`. Resampling uses half-pixel centers with edge clamping.

use crate::annotations::{box_to_crop_frame, square_expand, BoundingBox, PixelRect};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fill value for masked face pixels (on the 0..=255 scale).
pub const MASK_VALUE: f32 = 128.0;

/// Where a face's square crop comes from and where the face sits inside it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropSpec {
    pub source_box: BoundingBox,
    pub resolution: usize,
    pub face_box: BoundingBox,
    pub face_box_in_crop: BoundingBox,
}

impl CropSpec {
    /// Square-expand `face_box` inside a `image_w x image_h` image and map it
    /// to a `resolution x resolution` crop.
    pub fn new(face_box: &BoundingBox, image_w: usize, image_h: usize, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::invalid("crop resolution must be positive"));
        }
        let source_box = square_expand(face_box, image_w, image_h)?;
        Ok(CropSpec {
            source_box,
            resolution,
            face_box: *face_box,
            face_box_in_crop: box_to_crop_frame(face_box, &source_box, resolution)?,
        })
    }
}

fn image_dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match image.shape() {
        &[c, h, w] if h > 0 && w > 0 => Ok((c, h, w)),
        s => Err(Error::shape(format!("expected a [C, H, W] image, got {:?}", s))),
    }
}

fn sample_bilinear(plane: &[f32], w: usize, h: usize, sx: f64, sy: f64) -> f32 {
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
    let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
    let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], fx);
    let bottom = lerp(plane[y1 * w + x0], plane[y1 * w + x1], fx);
    lerp(top, bottom, fy)
}

/// Bilinear resample of the region `region` of `image` to `out_h x out_w`.
pub fn resample_region(image: &Tensor, region: &BoundingBox, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = image_dims(image)?;
    let (sx, sy) = (region.width() / out_w as f64, region.height() / out_h as f64);
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out.data_mut()[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        for i in 0..out_h {
            let y = region.y0() + (i as f64 + 0.5) * sy - 0.5;
            for j in 0..out_w {
                let x = region.x0() + (j as f64 + 0.5) * sx - 0.5;
                dst[i * out_w + j] = sample_bilinear(plane, w, h, x, y);
            }
        }
    }
    Ok(out)
}

/// Bilinear resize of a whole image.
pub fn resize(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, h, w) = image_dims(image)?;
    let full = BoundingBox::new(0.0, 0.0, w as f64, h as f64)?;
    resample_region(image, &full, out_h, out_w)
}

/// Cut `spec.source_box` out of `image` and resize it to `M x M`.
pub fn crop_resize(image: &Tensor, spec: &CropSpec) -> Result<Tensor> {
    let (_, h, w) = image_dims(image)?;
    let b = &spec.source_box;
    let tol = 1e-9;
    if b.x0() < -tol || b.y0() < -tol || b.x1() > w as f64 + tol || b.y1() > h as f64 + tol {
        return Err(Error::Data(format!(
            "crop ({}, {})-({}, {}) outside the {}x{} image",
            b.x0(),
            b.y0(),
            b.x1(),
            b.y1(),
            w,
            h
        )));
    }
    resample_region(image, b, spec.resolution, spec.resolution)
}

/// Set every pixel of `rect` in every channel to `value`.
pub fn fill_rect(image: &mut Tensor, rect: &PixelRect, value: f32) -> Result<()> {
    let (c, h, w) = image_dims(image)?;
    for ch in 0..c {
        for y in rect.y0..rect.y1.min(h) {
            let row = (ch * h + y) * w;
            image.data_mut()[row + rect.x0..row + rect.x1.min(w)].fill(value);
        }
    }
    Ok(())
}

/// Replace the pixels covered by the face box with [`MASK_VALUE`]. A pixel
/// counts as covered when its area overlaps the box.
pub fn mask_face(crop: &Tensor, face_box_in_crop: &BoundingBox) -> Result<Tensor> {
    let (_, h, w) = image_dims(crop)?;
    let mut out = crop.clone();
    if let Some(rect) = face_box_in_crop.pixel_rect(w, h) {
        fill_rect(&mut out, &rect, MASK_VALUE)?;
    }
    Ok(out)
}

/// `x / 127.5 - 1` for inputs within `[lo, hi]`.
pub fn normalize(crop: &Tensor, lo: f32, hi: f32) -> Result<Tensor> {
    if let Some(bad) = crop.data().iter().find(|v| !(lo..=hi).contains(*v)) {
        return Err(Error::Data(format!("pixel value {bad} outside [{lo}, {hi}]")));
    }
    let half = (hi - lo) * 0.5;
    Ok(crop.map(|v| (v - lo) / half - 1.0))
}

pub fn normalize_u8(crop: &Tensor) -> Result<Tensor> {
    normalize(crop, 0.0, 255.0)
}

/// Inverse of [`normalize_u8`].
pub fn denormalize(x: &Tensor) -> Tensor {
    x.map(|v| (v + 1.0) * 127.5)
}

/// Resize `generated` back onto the source square and write it into the
/// pixels covered by the face box. Everything else keeps the original bits.
pub fn paste_back(original: &Tensor, generated: &Tensor, spec: &CropSpec) -> Result<Tensor> {
    let (c, h, w) = image_dims(original)?;
    let m = spec.resolution;
    if generated.shape() != [c, m, m] {
        return Err(Error::shape(format!(
            "generated crop {:?} does not match [{}, {}, {}]",
            generated.shape(),
            c,
            m,
            m
        )));
    }
    let mut out = original.clone();
    let Some(rect) = spec.face_box.pixel_rect(w, h) else {
        return Ok(out);
    };
    let src = &spec.source_box;
    let (kx, ky) = (m as f64 / src.width(), m as f64 / src.height());
    for ch in 0..c {
        let plane = &generated.data()[ch * m * m..(ch + 1) * m * m];
        for y in rect.y0..rect.y1 {
            let cy = (y as f64 + 0.5 - src.y0()) * ky - 0.5;
            for x in rect.x0..rect.x1 {
                let cx = (x as f64 + 0.5 - src.x0()) * kx - 0.5;
                out.data_mut()[(ch * h + y) * w + x] = sample_bilinear(plane, m, m, cx, cy);
            }
        }
    }
    Ok(out)
}

/// Generator input for one face: the crop resized to `M`, face pixels
/// masked, values in `[-1, 1]`. `image` should already have every face box
/// masked at the image level so no face pixel can bleed in through
/// resampling.
pub fn generator_input(image: &Tensor, spec: &CropSpec) -> Result<Tensor> {
    let crop = crop_resize(image, spec)?;
    normalize_u8(&mask_face(&crop, &spec.face_box_in_crop)?)
}

/// Copy of `image` with the pixels of every face box set to [`MASK_VALUE`].
pub fn mask_faces_in_image(image: &Tensor, faces: &[BoundingBox]) -> Result<Tensor> {
    let (_, h, w) = image_dims(image)?;
    let mut out = image.clone();
    for f in faces {
        if let Some(rect) = f.pixel_rect(w, h) {
            fill_rect(&mut out, &rect, MASK_VALUE)?;
        }
    }
    Ok(out)
}
