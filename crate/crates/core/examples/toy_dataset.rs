//! Render a grid of procedural faces, with and without their face mask.
//!
//! cargo run --example toy_dataset -- out.png

use faceanon::data::FaceDataset;
use faceanon::image_io::save_rgb;
use faceanon::preprocess::mask_face;
use faceanon::tensor::Tensor;

fn main() -> faceanon::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "toy_faces.png".into());
    let (cols, m) = (8, 32);
    let ds = FaceDataset::synthetic(cols, m, 1)?;
    let mut grid = Tensor::zeros(&[3, 2 * m, cols * m]);
    for (i, s) in ds.samples().iter().enumerate() {
        let masked = mask_face(&s.crop, &s.face_box)?;
        for (row, img) in [&s.crop, &masked].into_iter().enumerate() {
            for c in 0..3 {
                for y in 0..m {
                    for x in 0..m {
                        let v = img.data()[(c * m + y) * m + x];
                        grid.data_mut()[(c * 2 * m + row * m + y) * cols * m + i * m + x] = v;
                    }
                }
            }
        }
    }
    save_rgb(&grid, out.as_ref())?;
    println!("wrote {out}");
    Ok(())
}
