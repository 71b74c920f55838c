//! Conditional β-VAE with a spatial latent.
//!
//! The encoder maps a `c×W×W` window and its condition vector to a diagonal
//! Gaussian over a `32×(W/16)×(W/16)` latent; the decoder maps a latent sample
//! back to a `c×W×W` reconstruction in `[0, 1]`. Every residual block
//! normalizes with [`CondBatchNorm`](crate::nn::CondBatchNorm), so the condition
//! vector reaches both networks through predicted scale and bias only.

mod checkpoint;
mod model;
mod objective;
mod train;

pub use checkpoint::ModelCheckpoint;
pub use model::{Cvae, LossParts, ResBlock, Resample};
pub use objective::{beta_schedule, kl_divergence, loss, reparam_sample, reparam_with_noise, sse};
pub use train::{train, EpochStats, TrainOptions, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

pub const LATENT_CHANNELS: usize = 32;
pub const CONDITION_DIM: usize = 5;
pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Square window side `W`; must be divisible by 16.
    pub input_width: usize,
    /// Consecutive slices per window; odd.
    pub channels: usize,
    pub latent_channels: usize,
    /// Feature width of the first stage; doubles per downsampling stage.
    pub base_width: usize,
    /// Residual blocks per resolution stage (the first one resamples).
    pub n_resblocks: usize,
    pub condition_dim: usize,
    pub beta_target: f64,
    pub anneal_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Random training windows drawn per volume per epoch.
    pub windows_per_volume: usize,
    /// Std of the initial condition-map weights.
    pub cond_init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Desk scale: 64-pixel windows, a narrow network and 30 epochs.
    fn default() -> Self {
        ModelConfig {
            input_width: 64,
            channels: 5,
            latent_channels: LATENT_CHANNELS,
            base_width: 8,
            n_resblocks: 1,
            condition_dim: CONDITION_DIM,
            beta_target: 1.0,
            anneal_epochs: 20,
            lr: 1e-3,
            batch_size: 16,
            epochs: 30,
            windows_per_volume: 4,
            cond_init_std: 0.02,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Paper-scale settings: 256-pixel windows (a 32×16×16 latent), base
    /// width 32 and 150 epochs.
    pub fn paper_scale() -> Self {
        ModelConfig { input_width: 256, base_width: 32, epochs: 150, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.input_width == 0 || !self.input_width.is_multiple_of(16) {
            return fail(format!("input_width {} must be a positive multiple of 16", self.input_width));
        }
        if self.channels.is_multiple_of(2) {
            return fail(format!("channels {} must be odd", self.channels));
        }
        if self.latent_channels == 0 || self.base_width == 0 || self.n_resblocks == 0 {
            return fail("latent_channels, base_width and n_resblocks must be >= 1".into());
        }
        if self.condition_dim == 0 {
            return fail("condition_dim must be >= 1".into());
        }
        if !(self.beta_target.is_finite() && self.beta_target >= 0.0) {
            return fail(format!("beta_target {} must be finite and >= 0", self.beta_target));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("lr {} must be > 0", self.lr));
        }
        if self.batch_size == 0 || self.windows_per_volume == 0 {
            return fail("batch_size and windows_per_volume must be >= 1".into());
        }
        Ok(())
    }

    pub fn latent_side(&self) -> usize {
        self.input_width / 16
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        [self.latent_channels, self.latent_side(), self.latent_side()]
    }

    /// Feature widths after each of the four downsampling stages.
    pub fn stage_widths(&self) -> [usize; 4] {
        let b = self.base_width;
        [b, 2 * b, 4 * b, 8 * b]
    }
}

/// Diagonal Gaussian posterior for a batch, each `[N, 32, W/16, W/16]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution<T> {
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
}

impl<T: Real> LatentDistribution<T> {
    pub fn new(mu: Tensor<T>, logvar: Tensor<T>) -> Result<Self> {
        if mu.shape() != logvar.shape() {
            return Err(Error::shape(mu.shape(), logvar.shape()));
        }
        Ok(LatentDistribution { mu, logvar })
    }

    pub fn batch(&self) -> usize {
        self.mu.n
    }
}
