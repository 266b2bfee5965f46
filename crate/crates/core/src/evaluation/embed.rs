//! Image embedders for the Fréchet distance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::fid::{FeatureStats, StatsAccumulator};
use crate::autograd::{no_grad, ops, Var};
use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::preprocess::resize;
use crate::tensor::Tensor;

/// Maps `[N, 3, H, W]` images in `[-1, 1]` to `N` feature vectors.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, images: &Tensor) -> Result<Vec<Vec<f32>>>;
}

/// Fixed random-weight convolutional encoder.
///
/// Input is resized to 32x32, then three 3x3 conv + leaky ReLU + 2x average
/// pool stages (3 -> 8 -> 16 -> 16 channels) give a 16x4x4 map, flattened
/// to 256 features. Weights depend only on the seed, so distances computed
/// with the same seed are comparable across runs and machines.
#[derive(Clone, Debug)]
pub struct RandomConvEmbedder {
    convs: Vec<Conv2d>,
}

pub const DEFAULT_EMBEDDER_SEED: u64 = 0x05EE_DF1D;
const EMBED_RESOLUTION: usize = 32;

impl RandomConvEmbedder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = [(3, 8), (8, 16), (16, 16)]
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| Conv2d::new(&format!("embed.conv{i}"), cin, cout, 3, &mut rng))
            .collect();
        RandomConvEmbedder { convs }
    }

    fn prepare(images: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = images.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("embedder needs RGB images, got {c} channels")));
        }
        if h == EMBED_RESOLUTION && w == EMBED_RESOLUTION {
            return Ok(images.clone());
        }
        let items = (0..n)
            .map(|i| {
                let one = images.batch_slice(i, 1)?.reshape(&[3, h, w])?;
                resize(&one, EMBED_RESOLUTION, EMBED_RESOLUTION)
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&items)
    }
}

impl Default for RandomConvEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBEDDER_SEED)
    }
}

impl Embedder for RandomConvEmbedder {
    fn dim(&self) -> usize {
        16 * 4 * 4
    }

    fn embed(&self, images: &Tensor) -> Result<Vec<Vec<f32>>> {
        let x = Self::prepare(images)?;
        let n = x.shape()[0];
        no_grad(|| {
            let mut h = Var::constant(x);
            for conv in &self.convs {
                h = ops::leaky_relu(&conv.forward(&h)?, 0.2);
                h = ops::downsample_avg2x(&h)?;
            }
            let d = self.dim();
            Ok(h.value().data().chunks(d).take(n).map(|c| c.to_vec()).collect())
        })
    }
}

/// Feature statistics of a large image set, embedded in chunks.
pub fn embedded_stats(
    embedder: &dyn Embedder,
    count: usize,
    chunk: usize,
    mut images: impl FnMut(std::ops::Range<usize>) -> Result<Tensor>,
) -> Result<FeatureStats> {
    let mut acc = StatsAccumulator::new(embedder.dim());
    let mut start = 0;
    while start < count {
        let end = (start + chunk.max(1)).min(count);
        for f in embedder.embed(&images(start..end)?)? {
            acc.push(&f)?;
        }
        start = end;
    }
    acc.finish()
}
