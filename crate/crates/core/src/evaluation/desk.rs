//! FID between real crops and the same crops with the face region replaced
//! by generator output.

use super::embed::{embedded_stats, Embedder};
use super::fid::{frechet_distance, FeatureStats};
use crate::annotations::BoundingBox;
use crate::data::FaceDataset;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::tensor::Tensor;
use crate::training::generate_with;

/// Copy `real` (`[N, C, M, M]`) and overwrite each sample's face pixels with
/// the matching pixels of `generated`.
pub fn composite(real: &Tensor, generated: &Tensor, face_boxes: &[BoundingBox]) -> Result<Tensor> {
    real.expect_same_shape(generated)?;
    let (n, c, h, w) = real.dims4()?;
    if face_boxes.len() != n {
        return Err(Error::shape(format!("{} face boxes for {n} images", face_boxes.len())));
    }
    let mut out = real.clone();
    for (i, b) in face_boxes.iter().enumerate() {
        let Some(rect) = b.pixel_rect(w, h) else { continue };
        for ch in 0..c {
            for y in rect.y0..rect.y1 {
                let row = ((i * c + ch) * h + y) * w;
                out.data_mut()[row + rect.x0..row + rect.x1]
                    .copy_from_slice(&generated.data()[row + rect.x0..row + rect.x1]);
            }
        }
    }
    Ok(out)
}

/// Anonymized versions of dataset crops `indices`, in `[-1, 1]`.
pub fn anonymized_crops(generator: &Generator, data: &FaceDataset, indices: &[usize]) -> Result<Tensor> {
    let m = data.resolution();
    if generator.resolution() != m {
        return Err(Error::invalid(format!(
            "generator works at {}x{} but the crops are {m}x{m}",
            generator.resolution(),
            generator.resolution()
        )));
    }
    let fake = generate_with(generator, data, indices)?;
    let real = data.batch(indices, m)?.real;
    let boxes: Vec<BoundingBox> = indices.iter().map(|&i| data.samples()[i].face_box).collect();
    composite(&real, &fake, &boxes)
}

pub fn real_stats(data: &FaceDataset, embedder: &dyn Embedder, chunk: usize) -> Result<FeatureStats> {
    embedded_stats(embedder, data.len(), chunk, |r| {
        Ok(data.batch(&r.collect::<Vec<_>>(), data.resolution())?.real)
    })
}

pub fn anonymized_stats(
    generator: &Generator,
    data: &FaceDataset,
    embedder: &dyn Embedder,
    chunk: usize,
) -> Result<FeatureStats> {
    embedded_stats(embedder, data.len(), chunk, |r| {
        anonymized_crops(generator, data, &r.collect::<Vec<_>>())
    })
}

/// FID between every real crop of `data` and its anonymized version.
pub fn desk_fid(generator: &Generator, data: &FaceDataset, embedder: &dyn Embedder) -> Result<f64> {
    let chunk = 64;
    let real = real_stats(data, embedder, chunk)?;
    let fake = anonymized_stats(generator, data, embedder, chunk)?;
    frechet_distance(&real, &fake)
}
