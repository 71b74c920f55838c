use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::standard_normal;
use super::{beta_schedule, Cvae, ModelCheckpoint, ModelConfig};
use crate::error::{Error, Result};
use crate::manifest::PatientMeta;
use crate::nn::{Adam, AdamConfig, Module};
use crate::volume::Volume;
use crate::windowing::{
    extract_window, raw_condition, sample_position, slice_coordinate, vertical_coordinate, ConditionFlags, Standardizer,
};

/// Mean loss terms over one epoch's batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub beta: f64,
    pub loss: f64,
    pub sse: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub flags: ConditionFlags,
    /// Random window positions per volume used to fit the standardizer.
    pub standardizer_samples: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { flags: ConditionFlags::default(), standardizer_samples: 16 }
    }
}

/// Summary of a finished training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: u64,
    pub seconds: f64,
}

/// Trains a model on registered healthy ROIs.
///
/// Each epoch draws `windows_per_volume` random windows from every volume,
/// shuffles them into batches and takes one Adam step per batch with
/// `β = beta_schedule(epoch)`. A trailing batch of a single window is dropped
/// because batch statistics are undefined for it. All randomness derives from
/// `config.seed`.
pub fn train(
    volumes: &[(Volume, PatientMeta)],
    config: &ModelConfig,
    options: &TrainOptions,
) -> Result<(ModelCheckpoint, TrainReport)> {
    config.validate()?;
    if volumes.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let (c, w) = (config.channels, config.input_width);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a41_17e5);

    let mut rows = Vec::with_capacity(volumes.len() * options.standardizer_samples.max(1));
    for (roi, meta) in volumes {
        for _ in 0..options.standardizer_samples.max(1) {
            let (center, top) = sample_position(roi, c, w, &mut rng)?;
            rows.push(raw_condition(meta, slice_coordinate(roi, center), vertical_coordinate(top, roi.height(), w)));
        }
    }
    let standardizer = Standardizer::fit(&rows)?;

    let model = Cvae::<f32>::new(config.clone())?;
    let mut ckpt = ModelCheckpoint { model, standardizer, flags: options.flags, history: Vec::new() };
    let mut adam = Adam::new(AdamConfig { lr: config.lr, ..Default::default() });
    let started = Instant::now();
    let mut steps = 0u64;

    for epoch in 0..config.epochs {
        let beta = beta_schedule(epoch, config);
        let mut positions = Vec::with_capacity(volumes.len() * config.windows_per_volume);
        for (vi, (volume, _)) in volumes.iter().enumerate() {
            for _ in 0..config.windows_per_volume {
                let (center, top) = sample_position(volume, c, w, &mut rng)?;
                positions.push((vi, center, top));
            }
        }
        positions.shuffle(&mut rng);
        let (mut sum_loss, mut sum_sse, mut sum_kl, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (bi, chunk) in positions.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let windows = chunk
                .iter()
                .map(|&(vi, center, top)| extract_window(&volumes[vi].0, &volumes[vi].1, c, w, center, top))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = windows.iter().collect();
            let (x, cond) = ckpt.batch_inputs(&refs)?;
            let eps = standard_normal(
                [chunk.len(), config.latent_channels, config.latent_side(), config.latent_side()],
                &mut rng,
            );
            ckpt.model.zero_grad();
            let parts = ckpt.model.train_step(&x, &cond, &eps, beta)?;
            if !(parts.loss.is_finite() && parts.sse.is_finite() && parts.kl.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: bi,
                    detail: format!("loss {} (sse {}, kl {}) at beta {beta}", parts.loss, parts.sse, parts.kl),
                });
            }
            adam.step(&mut ckpt.model);
            steps += 1;
            sum_loss += parts.loss;
            sum_sse += parts.sse;
            sum_kl += parts.kl;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::Validation("training set yields no batch of at least two windows".into()));
        }
        let nb = batches as f64;
        let stats = EpochStats { epoch, beta, loss: sum_loss / nb, sse: sum_sse / nb, kl: sum_kl / nb };
        debug!("epoch {epoch}: loss {:.3} sse {:.3} kl {:.3} beta {beta:.3}", stats.loss, stats.sse, stats.kl);
        ckpt.history.push(stats);
    }
    let seconds = started.elapsed().as_secs_f64();
    if let Some(last) = ckpt.history.last() {
        info!("trained {steps} steps in {seconds:.1}s, final loss {:.3}", last.loss);
    }
    Ok((ckpt, TrainReport { steps, seconds }))
}
