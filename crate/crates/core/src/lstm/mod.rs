//! Many-to-one LSTM binary classifier trained with backpropagation through time and Adam.
//!
//! Inputs are per-channel standardized, left-padded to the longest sequence in
//! each batch and masked: padding steps leave the recurrent state unchanged, so
//! the state at the final step of the batch is each sample's state after its own
//! last valid step. A sigmoid head turns that state into a score in `(0, 1)`.
//! Scores of 0.5 or more are read as `Good`.

mod adam;
mod batch;
mod network;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use batch::{PaddedBatch, Standardizer};
pub use network::{backward, batch_loss, dropout_mask, forward, forward_cached, Dropout, ForwardCache};
pub use params::{LayerParams, LstmParams};
pub use train::{train, train_with, EpochStats, Model, TrainControl, TrainOutcome, TrainingHistory, MODEL_FORMAT};

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("schema mismatch: model expects fingerprint {expected}, data has {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("data has {found} features, model expects {expected}")]
    FeatureCount { expected: usize, found: usize },
    #[error("cycle {0} has no samples")]
    EmptyCycle(String),
    #[error("non-finite value in {what} at epoch {epoch}, batch {batch}")]
    NonFinite { what: &'static str, epoch: usize, batch: usize },
    #[error("training cancelled")]
    Cancelled,
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn default_learning_rate() -> f64 {
    0.0001175
}
fn default_input_dim() -> usize {
    crate::types::FEATURE_COUNT
}
fn default_output_size() -> usize {
    1
}
fn default_units() -> Vec<usize> {
    vec![100, 100, 100]
}
fn default_dropout_inner() -> f64 {
    0.1598
}
fn default_dropout_final() -> f64 {
    0.279
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_batch_size() -> usize {
    64
}
fn default_epochs() -> usize {
    50
}
fn default_true() -> bool {
    true
}

/// Model and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default = "default_output_size")]
    pub output_size: usize,
    #[serde(default = "default_units")]
    pub units: Vec<usize>,
    /// Dropout after every LSTM layer but the last.
    #[serde(default = "default_dropout_inner")]
    pub dropout_inner: f64,
    /// Dropout on the last layer's final state.
    #[serde(default = "default_dropout_final")]
    pub dropout_final: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Seed used when a caller does not supply one.
    #[serde(default)]
    pub seed: u64,
    /// Z-score inputs with training-set statistics.
    #[serde(default = "default_true")]
    pub standardize: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_learning_rate(),
            input_dim: default_input_dim(),
            output_size: default_output_size(),
            units: default_units(),
            dropout_inner: default_dropout_inner(),
            dropout_final: default_dropout_final(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            seed: 0,
            standardize: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), LstmError> {
        let bad = |m: String| Err(LstmError::InvalidConfig(m));
        for (name, r) in [("dropout_inner", self.dropout_inner), ("dropout_final", self.dropout_final)] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} = {r} must lie in [0, 1)"));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} = {b} must lie in [0, 1)"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate = {} must be positive", self.learning_rate));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon = {} must be positive", self.epsilon));
        }
        if self.input_dim == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("input_dim, batch_size and epochs must be positive".into());
        }
        if self.units.is_empty() || self.units.contains(&0) {
            return bad("units must list at least one positive layer size".into());
        }
        if self.output_size != 1 {
            return bad(format!("output_size = {} is unsupported; the head has one neuron", self.output_size));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn init_params(&self, seed: u64) -> LstmParams {
        LstmParams::init(self.input_dim, &self.units, seed)
    }
}
