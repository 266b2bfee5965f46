//! Conditional critic scoring a candidate face against its background
//! condition and pose.
//!
//! The input is the 6-channel concatenation of candidate and condition
//! (plus pose at the input resolution). After the 1x1 input layer and after
//! every downsampling the pose image of the current resolution is
//! concatenated again, so each block sees pose no matter which resolution
//! the network was entered at.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::NUM_KEYPOINTS;
use crate::autograd::ops;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::generator::{check_image, ladder, GrowthState, PosePyramid};
use crate::nn::{Conv2d, Dense, Module, Parameter};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Wide,
    Deep,
    Unmodified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub variant: Variant,
    pub base_resolution: usize,
    pub max_resolution: usize,
    /// Channel count per resolution before widening, from base to max.
    pub filters: Vec<usize>,
    /// Applied to every layer of the wide variant.
    pub width_multiplier: f64,
    pub use_pose: bool,
    pub include_minibatch_stddev: bool,
    pub alpha_lrelu: f32,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            variant: Variant::Wide,
            base_resolution: 8,
            max_resolution: 128,
            filters: vec![336, 336, 256, 128, 64],
            width_multiplier: std::f64::consts::SQRT_2,
            use_pose: true,
            include_minibatch_stddev: false,
            alpha_lrelu: 0.2,
        }
    }
}

/// Nearest positive multiple of 8.
pub fn round_to_8(x: f64) -> usize {
    ((x / 8.0).round() as usize).max(1) * 8
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<Vec<usize>> {
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(Error::Config(format!(
                "width multiplier must be positive, got {}",
                self.width_multiplier
            )));
        }
        ladder(self.base_resolution, self.max_resolution, &self.filters)
    }

    /// Channel count actually used at `resolution`.
    pub fn channels_at(&self, resolution: usize) -> usize {
        let level = (resolution / self.base_resolution).trailing_zeros() as usize;
        let f = self.filters[level];
        match self.variant {
            Variant::Wide => round_to_8(f as f64 * self.width_multiplier),
            Variant::Deep | Variant::Unmodified => f,
        }
    }

    fn pose_channels(&self) -> usize {
        if self.use_pose {
            NUM_KEYPOINTS
        } else {
            0
        }
    }
}

/// `activation(F(x) + shortcut(x))` with `F = conv1 . activation . conv0`.
#[derive(Clone, Debug)]
pub struct ResidualUnit {
    pub conv0: Conv2d,
    pub conv1: Conv2d,
    /// 1x1 projection, present only when channel counts differ.
    pub shortcut: Option<Conv2d>,
}

impl ResidualUnit {
    fn new(name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        ResidualUnit {
            conv0: Conv2d::new(&format!("{name}.conv0"), cin, cout, 3, rng),
            conv1: Conv2d::new(&format!("{name}.conv1"), cout, cout, 3, rng),
            shortcut: (cin != cout).then(|| Conv2d::new(&format!("{name}.shortcut"), cin, cout, 1, rng)),
        }
    }

    pub fn forward(&self, x: &Var, slope: f32) -> Result<Var> {
        let f = self.conv1.forward(&ops::leaky_relu(&self.conv0.forward(x)?, slope))?;
        let s = match &self.shortcut {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        Ok(ops::leaky_relu(&ops::add(&f, &s)?, slope))
    }

    fn parameters(&self) -> Vec<&Parameter> {
        let mut out = self.conv0.parameters();
        out.extend(self.conv1.parameters());
        if let Some(s) = &self.shortcut {
            out.extend(s.parameters());
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.conv0.parameters_mut();
        out.extend(self.conv1.parameters_mut());
        if let Some(s) = &mut self.shortcut {
            out.extend(s.parameters_mut());
        }
        out
    }
}

#[derive(Clone, Debug)]
enum Block {
    Plain(Vec<Conv2d>),
    Residual(Vec<ResidualUnit>),
}

impl Block {
    fn forward(&self, x: &Var, slope: f32) -> Result<Var> {
        let mut h = x.clone();
        match self {
            Block::Plain(convs) => {
                for conv in convs {
                    h = ops::leaky_relu(&conv.forward(&h)?, slope);
                }
            }
            Block::Residual(units) => {
                for unit in units {
                    h = unit.forward(&h, slope)?;
                }
            }
        }
        Ok(h)
    }

    fn parameters(&self) -> Vec<&Parameter> {
        match self {
            Block::Plain(convs) => convs.iter().flat_map(|c| c.parameters()).collect(),
            Block::Residual(units) => units.iter().flat_map(|u| u.parameters()).collect(),
        }
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Block::Plain(convs) => convs.iter_mut().flat_map(|c| c.parameters_mut()).collect(),
            Block::Residual(units) => units.iter_mut().flat_map(|u| u.parameters_mut()).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    resolution: usize,
    from_input: BTreeMap<usize, Conv2d>,
    blocks: BTreeMap<usize, Block>,
    dense0: Dense,
    dense1: Dense,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let b = cfg.base_resolution;
        let c = cfg.channels_at(b);
        let mut from_input = BTreeMap::new();
        from_input.insert(b, Self::input_layer(&cfg, b, rng));
        let mut blocks = BTreeMap::new();
        blocks.insert(b, Self::block(&cfg, b, rng));
        let dense0 = Dense::new("discriminator.dense0", c * b * b, c, rng);
        let dense1 = Dense::new("discriminator.dense1", c, 1, rng);
        Ok(Discriminator {
            resolution: b,
            cfg,
            from_input,
            blocks,
            dense0,
            dense1,
        })
    }

    fn input_layer(cfg: &DiscriminatorConfig, r: usize, rng: &mut impl Rng) -> Conv2d {
        let name = format!("discriminator.from_input.{r}");
        Conv2d::new(&name, 6 + cfg.pose_channels(), cfg.channels_at(r), 1, rng)
    }

    fn block(cfg: &DiscriminatorConfig, r: usize, rng: &mut impl Rng) -> Block {
        let base = r == cfg.base_resolution;
        let c = cfg.channels_at(r);
        let cin = c + cfg.pose_channels() + usize::from(base && cfg.include_minibatch_stddev);
        let out = if base { c } else { cfg.channels_at(r / 2) };
        let name = format!("discriminator.block.{r}");
        match cfg.variant {
            Variant::Deep => Block::Residual(vec![
                ResidualUnit::new(&format!("{name}.unit0"), cin, c, rng),
                ResidualUnit::new(&format!("{name}.unit1"), c, out, rng),
            ]),
            Variant::Wide | Variant::Unmodified if base => {
                Block::Plain(vec![Conv2d::new(&format!("{name}.conv0"), cin, c, 3, rng)])
            }
            Variant::Wide | Variant::Unmodified => Block::Plain(vec![
                Conv2d::new(&format!("{name}.conv0"), cin, c, 3, rng),
                Conv2d::new(&format!("{name}.conv1"), c, out, 3, rng),
            ]),
        }
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Double the input resolution by adding a new input layer and block.
    pub fn grow(&mut self, rng: &mut impl Rng) -> Result<GrowthState> {
        if self.resolution >= self.cfg.max_resolution {
            return Err(Error::invalid(format!(
                "discriminator already at its maximum resolution {}",
                self.cfg.max_resolution
            )));
        }
        let r = self.resolution * 2;
        self.from_input.insert(r, Self::input_layer(&self.cfg, r, rng));
        self.blocks.insert(r, Self::block(&self.cfg, r, rng));
        self.resolution = r;
        Ok(GrowthState::transition(r, 0.0))
    }

    fn with_pose(&self, h: Var, pose: &PosePyramid, r: usize) -> Result<Var> {
        if self.cfg.use_pose {
            ops::concat_channels(&[&h, pose.get(r)?])
        } else {
            Ok(h)
        }
    }

    fn path(&self, r: usize, input: &Var, pose: &PosePyramid) -> Result<Var> {
        let slope = self.cfg.alpha_lrelu;
        let base = self.cfg.base_resolution;
        let input = self.with_pose(input.clone(), pose, r)?;
        let mut h = ops::leaky_relu(&self.from_input[&r].forward(&input)?, slope);
        let mut s = r;
        while s > base {
            h = self.with_pose(h, pose, s)?;
            h = ops::downsample_avg2x(&self.blocks[&s].forward(&h, slope)?)?;
            s /= 2;
        }
        h = self.with_pose(h, pose, base)?;
        if self.cfg.include_minibatch_stddev {
            h = ops::concat_channels(&[&h, &minibatch_stddev(&h)?])?;
        }
        h = self.blocks[&base].forward(&h, slope)?;
        let h = ops::leaky_relu(&self.dense0.forward(&ops::flatten(&h)?)?, slope);
        let score = self.dense1.forward(&h)?;
        let n = score.shape()[0];
        ops::reshape(&score, &[n])
    }

    /// Scores `[N]` for candidates and conditions at the state's resolution.
    pub fn forward(&self, candidate: &Var, condition: &Var, pose: &PosePyramid, state: &GrowthState) -> Result<Var> {
        let r = state.resolution;
        if r != self.resolution {
            return Err(Error::shape(format!(
                "growth state at {r} but discriminator built to {}",
                self.resolution
            )));
        }
        let n = check_image(candidate, 3, r, "candidate")?;
        if check_image(condition, 3, r, "condition")? != n {
            return Err(Error::shape("candidate and condition batch sizes differ"));
        }
        let input = ops::concat_channels(&[candidate, condition])?;
        let alpha = state.effective_alpha();
        if r == self.cfg.base_resolution || alpha >= 1.0 {
            return self.path(r, &input, pose);
        }
        let old = self.path(r / 2, &ops::downsample_avg2x(&input)?, pose)?;
        if alpha <= 0.0 {
            return Ok(old);
        }
        let new = self.path(r, &input, pose)?;
        ops::lerp(&old, &new, alpha)
    }

    /// Residual units of the deep variant at `resolution`, if any.
    pub fn residual_units(&self, resolution: usize) -> Option<&[ResidualUnit]> {
        match self.blocks.get(&resolution)? {
            Block::Residual(units) => Some(units),
            Block::Plain(_) => None,
        }
    }

    pub fn residual_units_mut(&mut self, resolution: usize) -> Option<&mut [ResidualUnit]> {
        match self.blocks.get_mut(&resolution)? {
            Block::Residual(units) => Some(units),
            Block::Plain(_) => None,
        }
    }

    /// Number of convolutions in the block at `resolution`.
    pub fn conv_count(&self, resolution: usize) -> usize {
        match self.blocks.get(&resolution) {
            Some(Block::Plain(convs)) => convs.len(),
            Some(Block::Residual(units)) => units.len() * 2,
            None => 0,
        }
    }

    pub fn input_channels(&self, resolution: usize) -> Option<usize> {
        self.from_input.get(&resolution).map(|c| c.in_channels())
    }
}

/// Average over features of the per-feature standard deviation across the
/// batch, broadcast as one extra channel.
fn minibatch_stddev(h: &Var) -> Result<Var> {
    let shape = h.shape().to_vec();
    let n = shape[0];
    let mean = ops::repeat_batch(&ops::mean_batch(h)?, n)?;
    let var = ops::mean_batch(&ops::square(&ops::sub(h, &mean)?))?;
    let std = ops::sqrt(&ops::affine(&var, 1.0, 1e-8));
    let s = ops::mean_all(&std);
    ops::expand_scalar(&s, &[n, 1, shape[2], shape[3]])
}

impl Module for Discriminator {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        for (r, conv) in &self.from_input {
            out.extend(conv.parameters());
            out.extend(self.blocks[r].parameters());
        }
        out.extend(self.dense0.parameters());
        out.extend(self.dense1.parameters());
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        let mut blocks = self.blocks.values_mut();
        for conv in self.from_input.values_mut() {
            out.extend(conv.parameters_mut());
            out.extend(blocks.next().expect("one block per level").parameters_mut());
        }
        out.extend(self.dense0.parameters_mut());
        out.extend(self.dense1.parameters_mut());
        out
    }
}
