//! Training loop, prediction and the model artifact.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::batch::{PaddedBatch, Standardizer};
use super::network::{backward, forward, forward_cached, Dropout};
use super::params::LstmParams;
use super::{LstmError, ModelConfig};
use crate::metrics::{accuracy, loss_mse, DEFAULT_THRESHOLD};
use crate::rng::{derive_seed, CounterRng};
use crate::types::{Dataset, Label};

/// Value of the `format` field in a saved model.
pub const MODEL_FORMAT: &str = "moldsynth-lstm/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// A trained network together with everything needed to score new data.
///
/// Saved as one JSON document:
/// `{"config": ModelConfig, "format": "moldsynth-lstm/1", "params": {...},
/// "schema_fingerprint": "<hex>", "standardizer": {"inv_std": [...], "mean": [...]}}`.
/// Arrays inside `params` use ndarray's serde form `{"v": 1, "dim": [...], "data": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub format: String,
    pub config: ModelConfig,
    pub schema_fingerprint: String,
    pub standardizer: Standardizer,
    pub params: LstmParams,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: TrainingHistory,
    /// Eval-mode scores after the last epoch, in dataset order.
    pub train_scores: Vec<f64>,
    pub val_scores: Vec<f64>,
}

/// Optional hooks for long runs.
#[derive(Default, Clone, Copy)]
pub struct TrainControl<'a> {
    /// Checked before every batch; training stops with [`LstmError::Cancelled`] once set.
    pub cancel: Option<&'a AtomicBool>,
    pub on_epoch: Option<&'a (dyn Fn(&EpochStats) + Sync)>,
}

fn check_data(config: &ModelConfig, fingerprint: &str, data: &Dataset, what: &'static str) -> Result<(), LstmError> {
    if data.is_empty() {
        return Err(LstmError::EmptyDataset(what));
    }
    let found = data.schema.fingerprint();
    if found != fingerprint {
        return Err(LstmError::SchemaMismatch {
            expected: fingerprint.to_string(),
            found,
        });
    }
    if data.schema.len() != config.input_dim {
        return Err(LstmError::FeatureCount {
            expected: config.input_dim,
            found: data.schema.len(),
        });
    }
    if let Some(r) = data.records.iter().find(|r| r.samples.nrows() == 0 || r.samples.ncols() != config.input_dim) {
        return Err(LstmError::EmptyCycle(r.cycle_id.clone()));
    }
    Ok(())
}

fn targets(data: &Dataset) -> Vec<f64> {
    data.records.iter().map(|r| r.label.target()).collect()
}

/// Eval-mode scores for already standardized sequences, in order.
///
/// Sequences are batched by length to keep padding short. Scores do not depend on
/// batch composition, so the grouping is invisible to callers.
fn score_sequences(params: &LstmParams, seqs: &[Array2<f64>], batch_size: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by_key(|&i| (seqs[i].nrows(), i));
    let mut out = vec![0.0; seqs.len()];
    for chunk in order.chunks(batch_size) {
        let views: Vec<ArrayView2<'_, f64>> = chunk.iter().map(|&i| seqs[i].view()).collect();
        let batch = PaddedBatch::new(&views, &vec![0.0; chunk.len()]);
        for (&i, s) in chunk.iter().zip(forward(params, &batch, None)) {
            out[i] = s;
        }
    }
    out
}

fn eval_stats(scores: &[f64], labels: &[Label], targets: &[f64]) -> (f64, f64) {
    (
        loss_mse(scores, targets).expect("non-empty, equal lengths"),
        accuracy(scores, labels, DEFAULT_THRESHOLD).expect("non-empty, equal lengths"),
    )
}

pub fn train(config: &ModelConfig, train: &Dataset, val: &Dataset, seed: u64) -> Result<TrainOutcome, LstmError> {
    train_with(config, train, val, seed, TrainControl::default())
}

/// Train for `config.epochs` epochs. A pure function of `(config, train, val, seed)`.
pub fn train_with(
    config: &ModelConfig,
    train: &Dataset,
    val: &Dataset,
    seed: u64,
    control: TrainControl<'_>,
) -> Result<TrainOutcome, LstmError> {
    config.validate()?;
    let fingerprint = train.schema.fingerprint();
    check_data(config, &fingerprint, train, "training")?;
    check_data(config, &fingerprint, val, "validation")?;

    let standardizer = if config.standardize {
        Standardizer::fit(train.records.iter().map(|r| r.samples.view()), config.input_dim)
    } else {
        Standardizer::identity(config.input_dim)
    };
    let train_x: Vec<Array2<f64>> = train.records.iter().map(|r| standardizer.apply(r.samples.view())).collect();
    let val_x: Vec<Array2<f64>> = val.records.iter().map(|r| standardizer.apply(r.samples.view())).collect();
    let train_y = targets(train);
    let val_y = targets(val);
    let train_labels = train.labels();
    let val_labels = val.labels();

    let mut params = config.init_params(derive_seed(seed, &[1]));
    let mut adam = AdamState::new(&params);
    let adam_cfg = config.adam();
    let mut shuffle = CounterRng::new(derive_seed(seed, &[2]));
    let mut history = TrainingHistory::default();
    let mut train_scores = Vec::new();
    let mut val_scores = Vec::new();

    for epoch in 0..config.epochs {
        let order = shuffle.permutation(train_x.len());
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            if control.cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
                return Err(LstmError::Cancelled);
            }
            let views: Vec<ArrayView2<'_, f64>> = idx.iter().map(|&i| train_x[i].view()).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| train_y[i]).collect();
            let batch = PaddedBatch::new(&views, &ys);
            let dropout = Dropout {
                inner: config.dropout_inner,
                last: config.dropout_final,
                seed: derive_seed(seed, &[3, epoch as u64, bi as u64]),
            };
            let cache = forward_cached(&params, &batch, Some(dropout));
            let (loss, grads) = backward(&params, &batch, &cache);
            if !loss.is_finite() || !grads.all_finite() {
                return Err(LstmError::NonFinite {
                    what: "gradients",
                    epoch: epoch + 1,
                    batch: bi,
                });
            }
            adam_step(&mut params, &grads, &mut adam, &adam_cfg);
            if !params.all_finite() {
                return Err(LstmError::NonFinite {
                    what: "parameters",
                    epoch: epoch + 1,
                    batch: bi,
                });
            }
        }
        train_scores = score_sequences(&params, &train_x, config.batch_size);
        val_scores = score_sequences(&params, &val_x, config.batch_size);
        let (train_loss, train_accuracy) = eval_stats(&train_scores, &train_labels, &train_y);
        let (val_loss, val_accuracy) = eval_stats(&val_scores, &val_labels, &val_y);
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
        };
        if let Some(f) = control.on_epoch {
            f(&stats);
        }
        history.epochs.push(stats);
    }

    Ok(TrainOutcome {
        model: Model {
            format: MODEL_FORMAT.to_string(),
            config: config.clone(),
            schema_fingerprint: fingerprint,
            standardizer,
            params,
        },
        history,
        train_scores,
        val_scores,
    })
}

impl Model {
    /// Eval-mode scores for every record, in dataset order.
    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>, LstmError> {
        check_data(&self.config, &self.schema_fingerprint, data, "evaluation")?;
        let seqs: Vec<Array2<f64>> = data.records.iter().map(|r| self.standardizer.apply(r.samples.view())).collect();
        Ok(score_sequences(&self.params, &seqs, self.config.batch_size))
    }

    pub fn to_json(&self) -> Result<String, LstmError> {
        crate::storage::to_sorted_json(self).map_err(|e| LstmError::Artifact(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, LstmError> {
        let m: Model = serde_json::from_str(text).map_err(|e| LstmError::Artifact(e.to_string()))?;
        if m.format != MODEL_FORMAT {
            return Err(LstmError::Artifact(format!("unsupported format {:?}", m.format)));
        }
        m.config.validate()?;
        if !m.params.has_shape(m.config.input_dim, &m.config.units) {
            return Err(LstmError::Artifact("parameter shapes do not match the config".into()));
        }
        if m.standardizer.mean.len() != m.config.input_dim || m.standardizer.inv_std.len() != m.config.input_dim {
            return Err(LstmError::Artifact("standardizer width does not match the config".into()));
        }
        if !m.params.all_finite() {
            return Err(LstmError::Artifact("non-finite parameter".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), LstmError> {
        let io = |e| LstmError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io)?;
        }
        fs::write(path, self.to_json()?).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, LstmError> {
        let text = fs::read_to_string(path).map_err(|e| LstmError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }
}
