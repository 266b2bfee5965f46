//! Wasserstein losses with gradient penalty and drift.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{grad, ops, Var};
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::{GrowthState, PosePyramid};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub gp_lambda: f32,
    pub drift: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gp_lambda: 10.0,
            drift: 0.001,
        }
    }
}

/// `mean(d_fake) - mean(d_real) + lambda * gp + drift * mean(d_real^2)`.
pub fn critic_loss(d_real: &Var, d_fake: &Var, gp: &Var, cfg: &LossConfig) -> Result<Var> {
    let wasserstein = ops::sub(&ops::mean_all(d_fake), &ops::mean_all(d_real))?;
    let drift = ops::scale(&ops::mean_all(&ops::square(d_real)), cfg.drift);
    let penalty = ops::scale(gp, cfg.gp_lambda);
    ops::add(&ops::add(&wasserstein, &penalty)?, &drift)
}

/// `-mean(d_fake)`.
pub fn generator_loss(d_fake: &Var) -> Var {
    ops::scale(&ops::mean_all(d_fake), -1.0)
}

/// Scalar critic and generator losses for given scores and penalty.
pub fn adversarial_losses(d_real: &Tensor, d_fake: &Tensor, gp: f32, cfg: &LossConfig) -> Result<(f32, f32)> {
    if !d_real.is_finite() || !d_fake.is_finite() || !gp.is_finite() {
        return Err(Error::NonFinite("critic scores or penalty are not finite".into()));
    }
    let (real, fake) = (Var::constant(d_real.clone()), Var::constant(d_fake.clone()));
    let gp = Var::constant(Tensor::scalar(gp));
    let loss_d = critic_loss(&real, &fake, &gp, cfg)?.value().item();
    let loss_g = generator_loss(&fake).value().item();
    Ok((loss_d, loss_g))
}

/// `u * real + (1 - u) * fake` with one `u` per sample.
pub fn interpolate(real: &Tensor, fake: &Tensor, u: &[f32]) -> Result<Tensor> {
    real.expect_same_shape(fake)?;
    let n = real.shape()[0];
    if u.len() != n {
        return Err(Error::shape(format!("{} mixing weights for {n} samples", u.len())));
    }
    let per = real.numel() / n.max(1);
    let mut out = Tensor::zeros(real.shape());
    for (i, ((o, r), f)) in out
        .data_mut()
        .iter_mut()
        .zip(real.data())
        .zip(fake.data())
        .enumerate()
    {
        let w = u[i / per];
        *o = w * r + (1.0 - w) * f;
    }
    Ok(out)
}

/// Penalty on a critic's input-gradient norm at the interpolates:
/// `mean((|grad_x critic(x)| - 1)^2)`. The result stays differentiable with
/// respect to whatever the critic closes over.
pub fn penalty_for(critic: impl Fn(&Var) -> Result<Var>, real: &Tensor, fake: &Tensor, u: &[f32]) -> Result<Var> {
    let x = Var::leaf(interpolate(real, fake, u)?);
    let scores = critic(&x)?;
    let g = grad(&ops::sum_all(&scores), &[&x], true)
        .pop()
        .flatten()
        .unwrap_or_else(|| Var::constant(Tensor::zeros(x.shape())));
    let sq = ops::sum_per_sample(&ops::square(&g))?;
    let norm = ops::sqrt(&ops::affine(&sq, 1.0, 1e-12));
    Ok(ops::mean_all(&ops::square(&ops::affine(&norm, 1.0, -1.0))))
}

/// [`penalty_for`] the conditional discriminator.
pub fn gradient_penalty_at(
    d: &Discriminator,
    real: &Tensor,
    fake: &Tensor,
    condition: &Var,
    pose: &PosePyramid,
    state: &GrowthState,
    u: &[f32],
) -> Result<Var> {
    penalty_for(|x| d.forward(x, condition, pose, state), real, fake, u)
}

/// [`gradient_penalty_at`] with mixing weights drawn uniformly from `rng`.
pub fn gradient_penalty(
    d: &Discriminator,
    real: &Tensor,
    fake: &Tensor,
    condition: &Var,
    pose: &PosePyramid,
    state: &GrowthState,
    rng: &mut impl Rng,
) -> Result<Var> {
    let u: Vec<f32> = (0..real.shape()[0]).map(|_| rng.random::<f32>()).collect();
    gradient_penalty_at(d, real, fake, condition, pose, state, &u)
}
