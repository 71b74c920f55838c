//! Experiment configuration, pipeline stages and the ablation suites.
//!
//! A run directory is keyed by a hash of the canonicalized semantic
//! configuration; generated datasets and registered ROIs are cached under
//! keys derived from only the sub-configurations they depend on, so runs that
//! share a dataset never regenerate or touch each other's inputs.

mod experiment;
mod stages;

pub use experiment::{
    ablate_features, ablate_slices, ablation_features_configs, ablation_slices_configs, run_experiment, run_seed,
    sweep_beta, sweep_beta_configs, write_csv, CsvRow, RunOptions, DEFAULT_BETAS,
};
pub use stages::{
    detect_stage, ensure_dataset, ensure_registered, eval_stage, fit_stage, load_registered, register_dataset,
    Detections, RegisteredSet, RoiRecord, SeedReport,
};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cvae::ModelConfig;
use crate::detector::DetectionConfig;
use crate::error::{Error, Result};
use crate::phantom::{LesionSpec, PhantomConfig};
use crate::registration::RegistrationConfig;
use crate::windowing::ConditionFlags;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub phantom: PhantomConfig,
    pub lesion: LesionSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            phantom: PhantomConfig::default(),
            lesion: LesionSpec::default(),
            n_train: 200,
            n_test: 30,
            seed: 0,
        }
    }
}

/// Complete description of an experiment. `model.channels` is the slice
/// count `c` and `model.beta_target` is β; `model.seed` is replaced by each
/// entry of `seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Free-form label; not part of the configuration hash.
    pub name: String,
    pub dataset: DatasetConfig,
    pub registration: RegistrationConfig,
    pub model: ModelConfig,
    pub conditioning: ConditionFlags,
    pub detection: DetectionConfig,
    pub seeds: Vec<u64>,
    /// β used by the "tuned β" row of the feature ablation.
    pub tuned_beta: f64,
}

impl Default for ExperimentConfig {
    /// Desk scale: 64-pixel windows, 200 training and 30 test phantoms,
    /// 30 epochs, 3 seeds.
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            dataset: DatasetConfig::default(),
            registration: RegistrationConfig::default(),
            model: ModelConfig::default(),
            conditioning: ConditionFlags::default(),
            detection: DetectionConfig::default(),
            seeds: vec![0, 1, 2],
            tuned_beta: 2.0,
        }
    }
}

impl ExperimentConfig {
    /// 256-pixel windows, full-width networks and 150 epochs.
    pub fn paper_scale() -> Self {
        let d = ExperimentConfig::default();
        ExperimentConfig {
            dataset: DatasetConfig {
                phantom: PhantomConfig { width: 256, height: 448, ..d.dataset.phantom.clone() },
                lesion: LesionSpec::for_width(256),
                ..d.dataset.clone()
            },
            registration: RegistrationConfig { target_width: 256, ..d.registration.clone() },
            model: ModelConfig::paper_scale(),
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.phantom.validate()?;
        self.dataset.lesion.validate()?;
        self.model.validate()?;
        self.detection.validate()?;
        if self.model.condition_dim != crate::cvae::CONDITION_DIM {
            return Err(Error::Validation(format!(
                "condition_dim {} must equal the {} conditioning features",
                self.model.condition_dim,
                crate::cvae::CONDITION_DIM
            )));
        }
        if self.registration.target_width != self.model.input_width {
            return Err(Error::Validation(format!(
                "registration target width {} differs from model input width {}",
                self.registration.target_width, self.model.input_width
            )));
        }
        if self.dataset.n_train == 0 || self.dataset.n_test == 0 {
            return Err(Error::Validation("dataset needs at least one training and one test volume".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Validation("seeds list is empty".into()));
        }
        if !(self.tuned_beta.is_finite() && self.tuned_beta >= 0.0) {
            return Err(Error::Validation(format!("tuned_beta {} must be finite and >= 0", self.tuned_beta)));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::format("config", e.to_string()))
    }

    /// Hash of every field that can change a seed's results. The label, the
    /// seed list and `model.seed` are excluded.
    pub fn config_hash(&self) -> String {
        let mut canon = self.clone();
        canon.name = String::new();
        canon.seeds = Vec::new();
        canon.model.seed = 0;
        hash_of(&canon)
    }

    /// Cache key of the generated dataset.
    pub fn dataset_hash(&self) -> String {
        hash_of(&self.dataset)
    }

    /// Cache key of the registered ROIs: dataset plus registration settings.
    pub fn registration_hash(&self) -> String {
        hash_of(&(&self.dataset, &self.registration))
    }

    /// Model configuration for one seed.
    pub fn model_for_seed(&self, seed: u64) -> ModelConfig {
        ModelConfig { seed, ..self.model.clone() }
    }
}

/// First 16 hex digits of the SHA-256 of the value's canonical JSON (object
/// keys sorted, shortest round-trip float formatting).
pub fn hash_of<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("configuration serializes to JSON");
    let text = serde_json::to_string(&v).expect("JSON value serializes");
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}
