//! Trainable parameters with equalized learning rate, the two layer types the
//! networks are built from, and the Adam / EMA update rules.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::ops;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A trainable tensor. The stored (raw) value is multiplied by
/// `runtime_scale` whenever it is used, so every weight has unit-variance
/// initialization and the optimizer sees a uniform dynamic range.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    var: Var,
    runtime_scale: f32,
    first_moment: Tensor,
    second_moment: Tensor,
    step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, runtime_scale: f32) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            name: name.into(),
            var: Var::leaf(value),
            runtime_scale,
            first_moment: Tensor::zeros(&shape),
            second_moment: Tensor::zeros(&shape),
            step: 0,
        }
    }

    /// He-scaled weight: unit Gaussian raw values, `sqrt(2 / fan_in)` runtime scale.
    pub fn weight(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let value = Tensor::from_fn(shape, |_| rng.sample::<f32, _>(StandardNormal));
        Parameter::new(name, value, (2.0 / fan_in as f64).sqrt() as f32)
    }

    pub fn bias(name: impl Into<String>, len: usize) -> Self {
        Parameter::new(name, Tensor::zeros(&[len]), 1.0)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        self.var.value()
    }

    /// The graph leaf for this parameter's raw value.
    pub fn var(&self) -> &Var {
        &self.var
    }

    pub fn runtime_scale(&self) -> f32 {
        self.runtime_scale
    }

    /// The value as used by the network, `raw * runtime_scale`.
    pub fn effective(&self) -> Var {
        if self.runtime_scale == 1.0 {
            self.var.clone()
        } else {
            ops::scale(&self.var, self.runtime_scale)
        }
    }

    pub fn numel(&self) -> usize {
        self.var.value().numel()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&Tensor, &Tensor) {
        (&self.first_moment, &self.second_moment)
    }

    pub fn set_value(&mut self, value: Tensor) -> Result<()> {
        self.var.value().expect_same_shape(&value)?;
        self.var = Var::leaf(value);
        Ok(())
    }

    pub(crate) fn set_optimizer_state(&mut self, m: Tensor, v: Tensor, step: u64) -> Result<()> {
        self.var.value().expect_same_shape(&m)?;
        self.var.value().expect_same_shape(&v)?;
        self.first_moment = m;
        self.second_moment = v;
        self.step = step;
        Ok(())
    }
}

/// Anything that owns parameters, visited in a fixed order.
pub trait Module {
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    /// Overwrite parameter values, given in [`Module::parameters`] order.
    fn load_values(&mut self, values: Vec<Tensor>) -> Result<()> {
        let mut params = self.parameters_mut();
        if params.len() != values.len() {
            return Err(Error::shape(format!(
                "{} values for {} parameters",
                values.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(values) {
            p.set_value(v)?;
        }
        Ok(())
    }
}

pub fn count_parameters<M: Module + ?Sized>(module: &M) -> usize {
    module.parameters().iter().map(|p| p.numel()).sum()
}

/// 2-D convolution with "same" padding for odd kernels.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Parameter,
    pub bias: Parameter,
    padding: usize,
}

impl Conv2d {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Conv2d {
            weight: Parameter::weight(
                format!("{name}.weight"),
                &[out_channels, in_channels, kernel, kernel],
                in_channels * kernel * kernel,
                rng,
            ),
            bias: Parameter::bias(format!("{name}.bias"), out_channels),
            padding: kernel / 2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value().shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value().shape()[0]
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        conv2d(x, &self.weight, &self.bias, self.padding)
    }
}

impl Module for Conv2d {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Convolution with the equalized-learning-rate weight scaling applied.
pub fn conv2d(input: &Var, weight: &Parameter, bias: &Parameter, padding: usize) -> Result<Var> {
    let kshape = weight.value().shape();
    if kshape.len() != 4 || kshape[2].is_multiple_of(2) || kshape[3].is_multiple_of(2) {
        return Err(Error::shape(format!("conv kernel must be OIHW with odd extents, got {:?}", kshape)));
    }
    let y = ops::conv2d(input, &weight.effective(), padding)?;
    ops::add_channel_bias(&y, &bias.effective())
}

/// Fully connected layer on `[N, F]` inputs.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Dense {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Dense {
            weight: Parameter::weight(format!("{name}.weight"), &[out_features, in_features], in_features, rng),
            bias: Parameter::bias(format!("{name}.bias"), out_features),
        }
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        let w = ops::transpose(&self.weight.effective())?;
        let y = ops::matmul(x, &w)?;
        ops::add_channel_bias(&y, &self.bias.effective())
    }
}

impl Module for Dense {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.00175,
            beta1: 0.0,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update applied in place to each parameter.
pub fn adam_step(params: &mut [&mut Parameter], grads: &[&Tensor], cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::invalid(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        p.value().expect_same_shape(g).map_err(|_| {
            Error::shape(format!(
                "gradient {:?} does not match parameter {} {:?}",
                g.shape(),
                p.name,
                p.value().shape()
            ))
        })?;
    }
    for (p, g) in params.iter_mut().zip(grads) {
        p.step += 1;
        let t = p.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let mut value = p.value().clone();
        let m = p.first_moment.data_mut();
        let v = p.second_moment.data_mut();
        for (((w, m), v), &g) in value.data_mut().iter_mut().zip(m).zip(v).zip(g.data()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        p.var = Var::leaf(value);
    }
    Ok(())
}

/// Decay of the generator's running average, `0.5^(B / half_life)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmaConfig {
    batch_size: usize,
    half_life_images: f64,
    beta: f64,
}

impl EmaConfig {
    pub fn new(batch_size: usize) -> Result<Self> {
        Self::with_half_life(batch_size, 1e4)
    }

    /// Like [`EmaConfig::new`] with a custom number of images over which the
    /// average's weight halves.
    pub fn with_half_life(batch_size: usize, half_life_images: f64) -> Result<Self> {
        if batch_size == 0 || half_life_images.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::invalid("EMA needs a positive batch size and half-life"));
        }
        Ok(EmaConfig {
            batch_size,
            half_life_images,
            beta: 0.5f64.powf(batch_size as f64 / half_life_images),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }
}

/// `shadow <- beta * shadow + (1 - beta) * live`.
pub fn ema_update(shadow: &mut [Tensor], live: &[&Parameter], cfg: &EmaConfig) -> Result<()> {
    if shadow.len() != live.len() {
        return Err(Error::shape(format!(
            "{} shadow tensors for {} parameters",
            shadow.len(),
            live.len()
        )));
    }
    for (s, p) in shadow.iter().zip(live) {
        s.expect_same_shape(p.value())?;
    }
    // Written as `s + (1 - beta)(live - s)` so equal weights stay bit-equal.
    let keep = (1.0 - cfg.beta) as f32;
    for (s, p) in shadow.iter_mut().zip(live) {
        for (a, &b) in s.data_mut().iter_mut().zip(p.value().data()) {
            *a += keep * (b - *a);
        }
    }
    Ok(())
}
