//! Progressive schedule: which resolution and phase each image belongs to.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{GrowthState, Phase};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Batch size per resolution, from the base resolution up.
    pub batch_sizes: Vec<usize>,
    /// Images per transition or stabilization phase before scaling.
    pub images_per_phase: u64,
    /// Divides `images_per_phase` for short runs.
    pub scale_factor: f64,
    /// Upper bound on every batch size, if set.
    pub batch_cap: Option<usize>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            scale_factor: 1000.0,
            batch_cap: Some(16),
            ..Self::full_scale()
        }
    }
}

impl ScheduleConfig {
    /// The unscaled schedule: 1.2M images per phase and batch sizes
    /// 256, 256, 128, 72, 48 for 8..128.
    pub fn full_scale() -> Self {
        ScheduleConfig {
            batch_sizes: vec![256, 256, 128, 72, 48],
            images_per_phase: 1_200_000,
            scale_factor: 1.0,
            batch_cap: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub resolution: usize,
    pub phase: Phase,
    pub batch_size: usize,
}

/// Position inside the schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub phase_index: usize,
    pub images_in_phase: u64,
    pub images_seen: u64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    phases: Vec<PhaseSpec>,
    images_per_phase: u64,
}

impl Schedule {
    pub fn new(cfg: &ScheduleConfig, base_resolution: usize, max_resolution: usize) -> Result<Self> {
        if !(cfg.scale_factor.is_finite() && cfg.scale_factor > 0.0) {
            return Err(Error::Config(format!("scale_factor must be positive, got {}", cfg.scale_factor)));
        }
        if cfg.batch_cap == Some(0) || cfg.batch_sizes.contains(&0) {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !base_resolution.is_power_of_two() || !max_resolution.is_power_of_two() || max_resolution < base_resolution {
            return Err(Error::Config(format!(
                "bad resolution ladder {base_resolution}..{max_resolution}"
            )));
        }
        let levels = (max_resolution / base_resolution).trailing_zeros() as usize + 1;
        if cfg.batch_sizes.len() < levels {
            return Err(Error::Config(format!(
                "{} batch sizes for {levels} resolutions",
                cfg.batch_sizes.len()
            )));
        }
        let images_per_phase = ((cfg.images_per_phase as f64 / cfg.scale_factor).round() as u64).max(1);
        let batch = |level: usize| cfg.batch_sizes[level].min(cfg.batch_cap.unwrap_or(usize::MAX));
        let mut phases = vec![PhaseSpec {
            resolution: base_resolution,
            phase: Phase::Stabilization,
            batch_size: batch(0),
        }];
        for level in 1..levels {
            let resolution = base_resolution << level;
            for phase in [Phase::Transition, Phase::Stabilization] {
                phases.push(PhaseSpec {
                    resolution,
                    phase,
                    batch_size: batch(level),
                });
            }
        }
        Ok(Schedule {
            phases,
            images_per_phase,
        })
    }

    pub fn phases(&self) -> &[PhaseSpec] {
        &self.phases
    }

    pub fn images_per_phase(&self) -> u64 {
        self.images_per_phase
    }

    pub fn total_images(&self) -> u64 {
        self.images_per_phase * self.phases.len() as u64
    }

    pub fn is_finished(&self, p: &Progress) -> bool {
        p.phase_index >= self.phases.len()
    }

    pub fn current(&self, p: &Progress) -> Option<&PhaseSpec> {
        self.phases.get(p.phase_index)
    }

    /// Growth state for the next step; alpha is the fraction of the
    /// transition's images already seen.
    pub fn growth_state(&self, p: &Progress) -> Option<GrowthState> {
        let spec = self.current(p)?;
        Some(match spec.phase {
            Phase::Stabilization => GrowthState::stable(spec.resolution),
            Phase::Transition => {
                let alpha = (p.images_in_phase as f64 / self.images_per_phase as f64).min(1.0);
                GrowthState::transition(spec.resolution, alpha as f32)
            }
        })
    }

    /// Count `images` towards the current phase. Returns the phase that was
    /// entered if the current one ran out of images.
    pub fn advance(&self, p: &mut Progress, images: u64) -> Option<PhaseSpec> {
        p.step += 1;
        p.images_seen += images;
        p.images_in_phase += images;
        if p.images_in_phase < self.images_per_phase {
            return None;
        }
        p.phase_index += 1;
        p.images_in_phase = 0;
        self.current(p).copied()
    }
}
