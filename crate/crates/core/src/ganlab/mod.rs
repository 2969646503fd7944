//! Adversarial training (paired and unpaired regimes) and inference.

mod infer;
mod paired;
mod trace;
mod unpaired;

pub use infer::{
    extract_features, load_feature_maps, load_generator, save_feature_maps, translate,
    GeneratorHandle,
};
pub use paired::train_paired;
pub use trace::{TraceRecord, TrainingTrace};
pub use unpaired::{cycle_reconstruction_terms, train_unpaired};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{DiscriminatorSpec, GeneratorSpec};

/// Conditional (paired) regime configuration. The adversarial term uses
/// cross-entropy; the reconstruction term is `l1_weight` times the mean
/// absolute error to the aligned target.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairedGanConfig {
    pub adversarial_weight: f64,
    pub l1_weight: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub checkpoint_interval: u32,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl Default for PairedGanConfig {
    fn default() -> Self {
        PairedGanConfig {
            adversarial_weight: 1.0,
            l1_weight: 100.0,
            epochs: 30,
            batch_size: 1,
            learning_rate: 2e-4,
            seed: 0,
            checkpoint_interval: 10,
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
        }
    }
}

impl PairedGanConfig {
    pub fn validate(&self) -> Result<()> {
        validate_common(
            &[self.adversarial_weight, self.l1_weight],
            self.epochs,
            self.batch_size,
            self.learning_rate,
        )
    }
}

/// Cycle-consistent (unpaired) regime configuration. The adversarial term
/// is least-squares; reconstruction is mean absolute error after the round
/// trip, plus an optional identity term.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnpairedGanConfig {
    pub adversarial_weight: f64,
    pub cycle_weight: f64,
    pub identity_weight: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub checkpoint_interval: u32,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl Default for UnpairedGanConfig {
    fn default() -> Self {
        UnpairedGanConfig {
            adversarial_weight: 1.0,
            cycle_weight: 10.0,
            identity_weight: 0.0,
            epochs: 30,
            batch_size: 1,
            learning_rate: 2e-4,
            seed: 0,
            checkpoint_interval: 10,
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
        }
    }
}

impl UnpairedGanConfig {
    pub fn validate(&self) -> Result<()> {
        validate_common(
            &[
                self.adversarial_weight,
                self.cycle_weight,
                self.identity_weight,
            ],
            self.epochs,
            self.batch_size,
            self.learning_rate,
        )
    }
}

fn validate_common(
    weights: &[f64],
    epochs: u32,
    batch_size: usize,
    learning_rate: f64,
) -> Result<()> {
    for &w in weights {
        if w < 0.0 || !w.is_finite() {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
    }
    if epochs < 1 {
        return Err(Error::Config("epochs must be >= 1".into()));
    }
    if batch_size < 1 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if learning_rate <= 0.0 || !learning_rate.is_finite() {
        return Err(Error::Config("learning_rate must be positive".into()));
    }
    Ok(())
}

/// Derives a sub-seed for a named stream (exposed so callers can
/// reconstruct initialization states).
pub fn derive_seed(seed: u64, stream: &str, epoch: u64) -> u64 {
    let mut h: u64 = seed ^ 0x6A09E667F3BCC908;
    for b in stream.bytes() {
        h = h.wrapping_mul(0x100000001B3).wrapping_add(u64::from(b));
    }
    h = h.wrapping_add(epoch.wrapping_mul(0x9E3779B97F4A7C15));
    // final avalanche
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51AFD7ED558CCD);
    h ^= h >> 33;
    h
}
