use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{critic_loss, generator_loss, gradient_penalty_at};
use super::schedule::{Progress, Schedule};
use super::TrainConfig;
use crate::autograd::{grad, no_grad, Var};
use crate::data::{Batch, FaceDataset};
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::{Generator, GrowthState, Phase, PosePyramid};
use crate::nn::{adam_step, ema_update, AdamConfig, EmaConfig, Module};
use crate::tensor::Tensor;

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub resolution: usize,
    pub phase: Phase,
    pub alpha: f32,
    pub loss_d: f32,
    pub loss_g: f32,
    pub images_seen: u64,
}

/// Live networks, their running-average copy, optimizer state and the
/// position in the schedule.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub(super) cfg: TrainConfig,
    pub(super) schedule: Schedule,
    pub(super) generator: Generator,
    pub(super) discriminator: Discriminator,
    pub(super) ema: Generator,
    pub(super) progress: Progress,
    pub(super) rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = Schedule::new(&cfg.schedule, cfg.generator.base_resolution, cfg.generator.max_resolution)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let generator = Generator::new(cfg.generator.clone(), &mut rng)?;
        let discriminator = Discriminator::new(cfg.discriminator.clone(), &mut rng)?;
        Ok(Trainer {
            ema: generator.clone(),
            cfg,
            schedule,
            generator,
            discriminator,
            progress: Progress::default(),
            rng,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn progress(&self) -> &Progress {
        &self.progress
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    /// Running average of the generator weights, used for inference.
    pub fn ema_generator(&self) -> &Generator {
        &self.ema
    }

    pub fn is_finished(&self) -> bool {
        self.schedule.is_finished(&self.progress)
    }

    /// State the next step will train at; after the schedule ends, the
    /// stable state at the final resolution.
    pub fn growth_state(&self) -> GrowthState {
        self.schedule
            .growth_state(&self.progress)
            .unwrap_or_else(|| GrowthState::stable(self.generator.resolution()))
    }

    /// One critic update followed by one generator update. On error the
    /// trainer is left exactly as it was before the call.
    pub fn step(&mut self, data: &FaceDataset) -> Result<StepMetrics> {
        let snapshot = self.clone();
        let out = self.step_inner(data);
        if out.is_err() {
            *self = snapshot;
        }
        out
    }

    fn step_inner(&mut self, data: &FaceDataset) -> Result<StepMetrics> {
        let spec = *self
            .schedule
            .current(&self.progress)
            .ok_or_else(|| Error::invalid("training schedule already finished"))?;
        let state = self.growth_state();
        let r = state.resolution;
        let n = spec.batch_size;
        let indices: Vec<usize> = (0..n).map(|_| self.rng.random_range(0..data.len())).collect();
        let batch = data.batch(&indices, r)?;
        let pose = pyramid(data, &batch, self.cfg.generator.base_resolution, r);
        let real = Var::constant(batch.real.clone());
        let condition = Var::constant(batch.condition.clone());

        // Critic.
        let fake = no_grad(|| self.generator.forward(&condition, &pose, &state))?;
        let d_real = self.discriminator.forward(&real, &condition, &pose, &state)?;
        let d_fake = self.discriminator.forward(&fake, &condition, &pose, &state)?;
        let u: Vec<f32> = (0..n).map(|_| self.rng.random::<f32>()).collect();
        let gp = gradient_penalty_at(
            &self.discriminator,
            real.value(),
            fake.value(),
            &condition,
            &pose,
            &state,
            &u,
        )?;
        let loss_d = critic_loss(&d_real, &d_fake, &gp, &self.cfg.loss)?;
        let loss_d_value = finite(loss_d.value().item(), "critic loss")?;
        apply_gradients(&mut self.discriminator, &loss_d, &self.cfg.optimizer)?;

        // Generator.
        let fake = self.generator.forward(&condition, &pose, &state)?;
        let d_fake = self.discriminator.forward(&fake, &condition, &pose, &state)?;
        let loss_g = generator_loss(&d_fake);
        let loss_g_value = finite(loss_g.value().item(), "generator loss")?;
        apply_gradients(&mut self.generator, &loss_g, &self.cfg.optimizer)?;

        let ema_cfg = EmaConfig::with_half_life(n, self.cfg.ema.half_life_images)?;
        let mut shadow: Vec<Tensor> = self.ema.parameters().iter().map(|p| p.value().clone()).collect();
        ema_update(&mut shadow, &self.generator.parameters(), &ema_cfg)?;
        self.ema.load_values(shadow)?;

        let metrics = StepMetrics {
            step: self.progress.step,
            resolution: r,
            phase: state.phase,
            alpha: state.alpha,
            loss_d: loss_d_value,
            loss_g: loss_g_value,
            images_seen: self.progress.images_seen + n as u64,
        };
        if let Some(next) = self.schedule.advance(&mut self.progress, n as u64) {
            if next.phase == Phase::Transition {
                self.generator.grow(&mut self.rng)?;
                self.discriminator.grow(&mut self.rng)?;
                self.ema.grow_like(&self.generator)?;
            }
        }
        Ok(metrics)
    }

    /// Step until the schedule ends or `max_steps` more steps have run,
    /// handing every step's metrics to `on_step`.
    pub fn run(
        &mut self,
        data: &FaceDataset,
        max_steps: Option<u64>,
        mut on_step: impl FnMut(&Trainer, &StepMetrics) -> Result<()>,
    ) -> Result<u64> {
        let mut done = 0;
        while !self.is_finished() && max_steps.is_none_or(|m| done < m) {
            let m = self.step(data)?;
            on_step(self, &m)?;
            done += 1;
        }
        Ok(done)
    }

    /// EMA-generator faces for `indices` at the current resolution, `[-1, 1]`.
    pub fn generate(&self, data: &FaceDataset, indices: &[usize]) -> Result<Tensor> {
        generate_with(&self.ema, data, indices)
    }
}

/// Run `generator` (stable state at its own resolution) on dataset samples.
pub fn generate_with(generator: &Generator, data: &FaceDataset, indices: &[usize]) -> Result<Tensor> {
    let r = generator.resolution();
    let state = GrowthState::stable(r);
    let batch = data.batch(indices, r)?;
    let pose = pyramid(data, &batch, generator.config().base_resolution, r);
    let out = no_grad(|| generator.forward(&Var::constant(batch.condition.clone()), &pose, &state))?;
    Ok(out.value().clone())
}

fn pyramid(data: &FaceDataset, batch: &Batch, base: usize, top: usize) -> PosePyramid {
    let mut p = PosePyramid::default();
    let mut r = base;
    while r <= top {
        p.insert(r, Var::constant(data.pose(batch, r)));
        r *= 2;
    }
    p
}

fn finite(v: f32, what: &str) -> Result<f32> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} is {v}")))
    }
}

/// Adam step on every parameter the loss depends on; parameters outside the
/// active path keep their values and optimizer state.
fn apply_gradients(module: &mut impl Module, loss: &Var, cfg: &AdamConfig) -> Result<()> {
    let vars: Vec<Var> = module.parameters().iter().map(|p| p.var().clone()).collect();
    let grads = grad(loss, &vars.iter().collect::<Vec<_>>(), false);
    let mut params = module.parameters_mut();
    let mut active = Vec::new();
    let mut active_grads = Vec::new();
    for (p, g) in params.iter_mut().zip(&grads) {
        if let Some(g) = g {
            if !g.value().is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name())));
            }
            active.push(&mut **p);
            active_grads.push(g.value());
        }
    }
    adam_step(&mut active, &active_grads, cfg)
}
