//! Pose-conditioned U-Net generator with progressive growing.
//!
//! At resolution `r` the encoder runs two 3x3 convolutions and downsamples;
//! the decoder upsamples, concatenates the pose image and the encoder skip,
//! squeezes the result with a 1x1 bottleneck and runs two 3x3 convolutions.
//! Every convolution except the RGB heads is followed by pixel normalization
//! and a leaky ReLU.
//!
//! While a new resolution fades in, the output is the affine blend
//! `(1 - alpha) * upsample(G_{r/2}(downsample(x))) + alpha * G_r(x)`, where
//! both terms use the same shared inner layers.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{pose_batch, KeypointSet, NUM_KEYPOINTS};
use crate::autograd::ops;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Module, Parameter};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Transition,
    Stabilization,
}

/// Where the progressive schedule currently is.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthState {
    pub resolution: usize,
    pub alpha: f32,
    pub phase: Phase,
}

impl GrowthState {
    pub fn stable(resolution: usize) -> Self {
        GrowthState {
            resolution,
            alpha: 1.0,
            phase: Phase::Stabilization,
        }
    }

    pub fn transition(resolution: usize, alpha: f32) -> Self {
        GrowthState {
            resolution,
            alpha,
            phase: Phase::Transition,
        }
    }

    /// Blend weight of the newest layers; always 1 outside transitions.
    pub fn effective_alpha(&self) -> f32 {
        match self.phase {
            Phase::Transition => self.alpha.clamp(0.0, 1.0),
            Phase::Stabilization => 1.0,
        }
    }
}

/// Validated resolution ladder and per-resolution filter counts.
pub(crate) fn ladder(base: usize, max: usize, filters: &[usize]) -> Result<Vec<usize>> {
    if !base.is_power_of_two() || !max.is_power_of_two() || base < 2 || max < base {
        return Err(Error::Config(format!(
            "resolutions must be powers of two with base <= max, got {base}..{max}"
        )));
    }
    let levels: Vec<usize> = std::iter::successors(Some(base), |r| Some(r * 2))
        .take_while(|&r| r <= max)
        .collect();
    if filters.len() != levels.len() {
        return Err(Error::Config(format!(
            "{} filter counts given for {} resolutions {:?}",
            filters.len(),
            levels.len(),
            levels
        )));
    }
    if let Some(f) = filters.iter().find(|&&f| f == 0 || f % 8 != 0) {
        return Err(Error::Config(format!(
            "filter count {f} must be positive and divisible by 8"
        )));
    }
    Ok(levels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub base_resolution: usize,
    pub max_resolution: usize,
    /// Channel count per resolution, from base to max.
    pub filters: Vec<usize>,
    pub use_pose: bool,
    pub alpha_lrelu: f32,
    pub pixel_norm_epsilon: f32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_resolution: 8,
            max_resolution: 128,
            filters: vec![336, 336, 256, 128, 64],
            use_pose: true,
            alpha_lrelu: 0.2,
            pixel_norm_epsilon: 1e-8,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<Vec<usize>> {
        ladder(self.base_resolution, self.max_resolution, &self.filters)
    }

    pub fn filters_at(&self, resolution: usize) -> usize {
        let level = (resolution / self.base_resolution).trailing_zeros() as usize;
        self.filters[level]
    }

    fn pose_channels(&self) -> usize {
        if self.use_pose {
            NUM_KEYPOINTS
        } else {
            0
        }
    }
}

/// One-hot pose images for every resolution of the ladder.
#[derive(Clone, Debug, Default)]
pub struct PosePyramid {
    levels: BTreeMap<usize, Var>,
}

impl PosePyramid {
    /// Encode keypoints given in an `m x m` crop frame at each resolution.
    pub fn from_keypoints(points: &[KeypointSet], m: usize, resolutions: &[usize]) -> Self {
        let levels = resolutions
            .iter()
            .map(|&r| (r, Var::constant(pose_batch(points, m, r))))
            .collect();
        PosePyramid { levels }
    }

    pub fn insert(&mut self, resolution: usize, pose: Var) {
        self.levels.insert(resolution, pose);
    }

    pub fn get(&self, resolution: usize) -> Result<&Var> {
        self.levels
            .get(&resolution)
            .ok_or_else(|| Error::invalid(format!("pose pyramid has no {resolution}x{resolution} level")))
    }

    pub fn resolutions(&self) -> impl Iterator<Item = usize> + '_ {
        self.levels.keys().copied()
    }
}

pub(crate) fn check_image(x: &Var, channels: usize, resolution: usize, what: &str) -> Result<usize> {
    match x.shape() {
        &[n, c, h, w] if c == channels && h == resolution && w == resolution => Ok(n),
        s => Err(Error::shape(format!(
            "{what} must be [N, {channels}, {resolution}, {resolution}], got {:?}",
            s
        ))),
    }
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    conv0: Conv2d,
    conv1: Conv2d,
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    bottleneck: Conv2d,
    conv0: Conv2d,
    conv1: Conv2d,
}

#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    resolution: usize,
    from_input: BTreeMap<usize, Conv2d>,
    encoder: BTreeMap<usize, EncoderBlock>,
    decoder: BTreeMap<usize, DecoderBlock>,
    to_rgb: BTreeMap<usize, Conv2d>,
}

impl Generator {
    /// Build the network at its base resolution.
    pub fn new(cfg: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut g = Generator {
            resolution: cfg.base_resolution,
            cfg,
            from_input: BTreeMap::new(),
            encoder: BTreeMap::new(),
            decoder: BTreeMap::new(),
            to_rgb: BTreeMap::new(),
        };
        g.add_level(g.cfg.base_resolution, rng);
        Ok(g)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Highest resolution built so far.
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    fn add_level(&mut self, r: usize, rng: &mut impl Rng) {
        let cfg = &self.cfg;
        let c = cfg.filters_at(r);
        let p = cfg.pose_channels();
        let base = r == cfg.base_resolution;
        let below = if base { c } else { cfg.filters_at(r / 2) };
        let name = |part: &str| format!("generator.{part}.{r}");
        let from_input = Conv2d::new(&name("from_input"), 3 + p, c, 1, rng);
        let encoder = EncoderBlock {
            conv0: Conv2d::new(&format!("{}.conv0", name("encoder")), c, c, 3, rng),
            conv1: Conv2d::new(&format!("{}.conv1", name("encoder")), c, below, 3, rng),
        };
        let decoder_in = if base { c + p } else { below + p + below };
        let decoder = DecoderBlock {
            bottleneck: Conv2d::new(&format!("{}.bottleneck", name("decoder")), decoder_in, c, 1, rng),
            conv0: Conv2d::new(&format!("{}.conv0", name("decoder")), c, c, 3, rng),
            conv1: Conv2d::new(&format!("{}.conv1", name("decoder")), c, c, 3, rng),
        };
        let to_rgb = Conv2d::new(&name("to_rgb"), c, 3, 1, rng);
        self.from_input.insert(r, from_input);
        self.encoder.insert(r, encoder);
        self.decoder.insert(r, decoder);
        self.to_rgb.insert(r, to_rgb);
    }

    /// Double the resolution: new entry/exit blocks and heads are added,
    /// existing weights are untouched. Returns the fresh transition state.
    pub fn grow(&mut self, rng: &mut impl Rng) -> Result<GrowthState> {
        if self.resolution >= self.cfg.max_resolution {
            return Err(Error::invalid(format!(
                "generator already at its maximum resolution {}",
                self.cfg.max_resolution
            )));
        }
        let r = self.resolution * 2;
        self.add_level(r, rng);
        self.resolution = r;
        Ok(GrowthState::transition(r, 0.0))
    }

    /// Grow to match `other` by copying its newer levels.
    pub fn grow_like(&mut self, other: &Generator) -> Result<()> {
        if other.cfg != self.cfg || other.resolution < self.resolution {
            return Err(Error::invalid("generator structures are incompatible"));
        }
        for (&r, conv) in other.from_input.range(self.resolution * 2..) {
            self.from_input.insert(r, conv.clone());
            self.encoder.insert(r, other.encoder[&r].clone());
            self.decoder.insert(r, other.decoder[&r].clone());
            self.to_rgb.insert(r, other.to_rgb[&r].clone());
        }
        self.resolution = other.resolution;
        Ok(())
    }

    fn act(&self, conv: &Conv2d, x: &Var) -> Result<Var> {
        let y = conv.forward(x)?;
        let y = ops::pixel_norm(&y, self.cfg.pixel_norm_epsilon)?;
        Ok(ops::leaky_relu(&y, self.cfg.alpha_lrelu))
    }

    fn with_pose(&self, parts: &[&Var], pose: &PosePyramid, r: usize) -> Result<Var> {
        let mut all: Vec<&Var> = parts.to_vec();
        if self.cfg.use_pose {
            all.insert(1, pose.get(r)?);
        }
        ops::concat_channels(&all)
    }

    /// The full network rooted at resolution `r` (no blending).
    fn path(&self, r: usize, x: &Var, pose: &PosePyramid) -> Result<Var> {
        let base = self.cfg.base_resolution;
        let mut h = self.act(&self.from_input[&r], &self.with_pose(&[x], pose, r)?)?;
        let mut skips = Vec::new();
        let mut s = r;
        while s > base {
            let block = &self.encoder[&s];
            let skip = self.act(&block.conv1, &self.act(&block.conv0, &h)?)?;
            h = ops::downsample_avg2x(&skip)?;
            skips.push((s, skip));
            s /= 2;
        }
        let block = &self.encoder[&base];
        h = self.act(&block.conv1, &self.act(&block.conv0, &h)?)?;

        let mut d = self.decode(base, &self.with_pose(&[&h], pose, base)?)?;
        for (s, skip) in skips.into_iter().rev() {
            let up = ops::upsample_nearest2x(&d)?;
            d = self.decode(s, &self.with_pose(&[&up, &skip], pose, s)?)?;
        }
        Ok(ops::tanh(&self.to_rgb[&r].forward(&d)?))
    }

    fn decode(&self, r: usize, x: &Var) -> Result<Var> {
        let block = &self.decoder[&r];
        let h = self.act(&block.bottleneck, x)?;
        let h = self.act(&block.conv0, &h)?;
        self.act(&block.conv1, &h)
    }

    /// Generate `[N, 3, r, r]` faces from masked crops at the state's
    /// resolution `r` and their pose images.
    pub fn forward(&self, masked: &Var, pose: &PosePyramid, state: &GrowthState) -> Result<Var> {
        let r = state.resolution;
        if r != self.resolution {
            return Err(Error::shape(format!(
                "growth state at {r} but generator built to {}",
                self.resolution
            )));
        }
        check_image(masked, 3, r, "masked crop")?;
        let alpha = state.effective_alpha();
        if r == self.cfg.base_resolution || alpha >= 1.0 {
            return self.path(r, masked, pose);
        }
        let old = self.path(r / 2, &ops::downsample_avg2x(masked)?, pose)?;
        let old = ops::upsample_nearest2x(&old)?;
        if alpha <= 0.0 {
            return Ok(old);
        }
        let new = self.path(r, masked, pose)?;
        ops::lerp(&old, &new, alpha)
    }
}

impl Module for Generator {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        for (r, from_input) in &self.from_input {
            out.extend(from_input.parameters());
            let e = &self.encoder[r];
            out.extend(e.conv0.parameters());
            out.extend(e.conv1.parameters());
            let d = &self.decoder[r];
            out.extend(d.bottleneck.parameters());
            out.extend(d.conv0.parameters());
            out.extend(d.conv1.parameters());
            out.extend(self.to_rgb[r].parameters());
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        let Generator {
            from_input,
            encoder,
            decoder,
            to_rgb,
            ..
        } = self;
        let mut enc = encoder.values_mut();
        let mut dec = decoder.values_mut();
        let mut rgb = to_rgb.values_mut();
        for from_input in from_input.values_mut() {
            out.extend(from_input.parameters_mut());
            let e = enc.next().expect("one encoder block per level");
            out.extend(e.conv0.parameters_mut());
            out.extend(e.conv1.parameters_mut());
            let d = dec.next().expect("one decoder block per level");
            out.extend(d.bottleneck.parameters_mut());
            out.extend(d.conv0.parameters_mut());
            out.extend(d.conv1.parameters_mut());
            out.extend(rgb.next().expect("one head per level").parameters_mut());
        }
        out
    }
}
