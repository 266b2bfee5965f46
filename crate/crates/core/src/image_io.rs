//! PNG files to and from `[3, H, W]` tensors on the 0..=255 scale.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn load_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    Ok(from_rgb8(&img))
}

pub fn from_rgb8(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    let data = t.data_mut();
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32;
        }
    }
    t
}

/// Round to the nearest 8-bit value, clamping out-of-range values.
pub fn to_rgb8(image: &Tensor) -> Result<RgbImage> {
    let &[3, h, w] = image.shape() else {
        return Err(Error::shape(format!("expected a [3, H, W] image, got {:?}", image.shape())));
    };
    if !image.is_finite() {
        return Err(Error::NonFinite("image contains non-finite pixels".into()));
    }
    let d = image.data();
    let q = |c: usize, x: u32, y: u32| d[(c * h + y as usize) * w + x as usize].round().clamp(0.0, 255.0) as u8;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| Rgb([q(0, x, y), q(1, x, y), q(2, x, y)])))
}

pub fn save_rgb(image: &Tensor, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    to_rgb8(image)?.save(path)?;
    Ok(())
}

/// PNG files directly inside `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_for_integer_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Tensor::from_fn(&[3, 5, 7], |i| (i * 37 % 256) as f32);
        save_rgb(&img, &path).unwrap();
        assert_eq!(load_rgb(&path).unwrap(), img);
        assert_eq!(list_pngs(dir.path()).unwrap(), vec![path]);
    }

    #[test]
    fn saving_rounds_and_clamps() {
        let img = Tensor::new(vec![3, 1, 2], vec![-3.0, 300.0, 1.4, 1.6, 254.5, 0.49]).unwrap();
        let rgb = to_rgb8(&img).unwrap();
        assert_eq!(rgb.get_pixel(0, 0).0, [0, 1, 255]);
        assert_eq!(rgb.get_pixel(1, 0).0, [255, 2, 0]);
    }
}
