use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ConditioningLayout, WARP_MAX, WARP_MIN};
use crate::gan::DiscriminatorConfig;
use crate::generator::GeneratorConfig;
use crate::speaker::EncoderConfig;

/// Every setting of a training run. Unknown keys are rejected when parsed
/// from TOML; omitted keys take the desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    /// Conditioning frames per training crop (256 samples each).
    pub crop_frames: usize,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub iters_phase1: u64,
    pub iters_phase2: u64,
    pub anneal_steps: u64,
    pub lambda_aux: f64,
    pub lambda_ssc: f64,
    pub n_ssc: usize,
    pub warp_min: f32,
    pub warp_max: f32,
    pub lifter_coeffs: usize,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: u64,
    pub use_gaussian_embeddings: bool,
    pub use_ssc: bool,
    pub use_warping: bool,
    pub use_pnorm: bool,
    pub use_median_f0: bool,
    /// Use the mean cosine itself as L_ssc instead of `1 − mean cosine`.
    pub ssc_raw_cosine: bool,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 32,
            crop_frames: 32,
            lr_phase1: 1e-4,
            lr_phase2: 5e-5,
            beta1: 0.5,
            beta2: 0.9,
            weight_decay: 0.01,
            iters_phase1: 20_000,
            iters_phase2: 1_000,
            anneal_steps: 400,
            lambda_aux: 2.5,
            lambda_ssc: 0.9,
            n_ssc: 8,
            warp_min: WARP_MIN,
            warp_max: WARP_MAX,
            lifter_coeffs: 20,
            checkpoint_every: 1_000,
            use_gaussian_embeddings: true,
            use_ssc: true,
            use_warping: true,
            use_pnorm: true,
            use_median_f0: true,
            ssc_raw_cosine: false,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale defaults.
    pub fn desk() -> Self {
        Self::default()
    }

    /// The published schedule: 1.8M phase-1 iterations, 5000 phase-2
    /// iterations with a 2000-step annealing ramp.
    pub fn paper() -> Self {
        Self {
            iters_phase1: 1_800_000,
            iters_phase2: 5_000,
            anneal_steps: 2_000,
            checkpoint_every: 10_000,
            ..Self::default()
        }
    }

    /// The acceptance toy run: batch 2, 400 + 100 iterations, a 40-step
    /// ramp and one cross-speaker conversion per sample (the toy corpus has
    /// two speakers).
    pub fn toy() -> Self {
        Self {
            batch_size: 2,
            iters_phase1: 400,
            iters_phase2: 100,
            anneal_steps: 40,
            n_ssc: 1,
            checkpoint_every: 100,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn layout(&self) -> ConditioningLayout {
        ConditioningLayout {
            embed_dim: self.encoder.embed_dim,
            use_pnorm: self.use_pnorm,
            use_median_f0: self.use_median_f0,
        }
    }

    pub fn total_iters(&self) -> u64 {
        self.iters_phase1 + self.iters_phase2
    }

    /// Effective λ_ssc at phase-2 step `phase2_step`: a linear ramp from 0
    /// reaching `lambda_ssc` at `anneal_steps`.
    pub fn lambda_ssc_at(&self, phase2_step: u64) -> f64 {
        if self.anneal_steps == 0 {
            return self.lambda_ssc;
        }
        self.lambda_ssc * (phase2_step as f64 / self.anneal_steps as f64).min(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.lr_phase1 > 0.0 && self.lr_phase2 > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || self.lambda_aux < 0.0 || self.lambda_ssc < 0.0 {
            return bad("weight decay and loss weights must be nonnegative");
        }
        if self.batch_size == 0 || self.crop_frames == 0 {
            return bad("batch size and crop length must be positive");
        }
        if self.anneal_steps > self.iters_phase2 {
            return bad("anneal_steps must not exceed iters_phase2");
        }
        if self.use_ssc && self.n_ssc == 0 {
            return bad("n_ssc must be positive when the SSC loss is enabled");
        }
        if !(WARP_MIN <= self.warp_min && self.warp_min <= self.warp_max && self.warp_max <= WARP_MAX) {
            return bad("warp range must lie within [0.85, 1.15]");
        }
        if !(1..=crate::features::N_MELS).contains(&self.lifter_coeffs) {
            return bad("lifter_coeffs must lie in [1, 80]");
        }
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.crop_frames * crate::features::HOP < self.discriminator.min_samples() {
            return bad("training crops are shorter than the discriminators accept");
        }
        Ok(())
    }
}
