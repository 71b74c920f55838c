//! Conditional β-VAE sliding-window anomaly detection for 3D volumes.

pub mod cvae;
pub mod detector;
pub mod error;
pub mod harness;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod registration;
pub mod volume;
pub mod windowing;

pub use error::{Error, Result};
