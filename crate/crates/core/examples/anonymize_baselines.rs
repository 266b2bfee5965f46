//! Apply every non-generative method to a rendered face and save the
//! results side by side.
//!
//! cargo run --release --example anonymize_baselines -- baselines.png

use faceanon::annotations::FaceAnnotation;
use faceanon::anonymizers::Method;
use faceanon::data::render_toy_face;
use faceanon::image_io::save_rgb;
use faceanon::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> faceanon::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "baselines.png".into());
    let m = 96;
    let sample = render_toy_face(m, &mut ChaCha8Rng::seed_from_u64(4));
    let faces = [FaceAnnotation {
        bbox: sample.face_box,
        keypoints: sample.keypoints,
    }];
    let mut panels = vec![sample.crop.clone()];
    for method in Method::ALL.into_iter().filter(|m| !m.needs_generator()) {
        panels.push(method.apply(&sample.crop, &faces, None)?.image);
        println!("{method}");
    }
    let mut strip = Tensor::zeros(&[3, m, panels.len() * m]);
    for (i, p) in panels.iter().enumerate() {
        for c in 0..3 {
            for y in 0..m {
                let src = (c * m + y) * m;
                let dst = (c * m + y) * panels.len() * m + i * m;
                strip.data_mut()[dst..dst + m].copy_from_slice(&p.data()[src..src + m]);
            }
        }
    }
    save_rgb(&strip, out.as_ref())?;
    println!("wrote {out}");
    Ok(())
}
