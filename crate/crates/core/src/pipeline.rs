//! Dataset enrichment: decimation augmentation, real-data splits and synthetic mixing.
//!
//! Two mixing protocols are supported. *Additive* keeps every real training
//! cycle and adds `round(percent / 100 × real_total)` synthetic ones on top.
//! *Substitutive* keeps the training-set size fixed and replaces real cycles
//! with synthetic ones. Synthetic draws are stratified to the pool's class mix.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, CounterRng};
use crate::types::{CycleRecord, Dataset, Label, Source};

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("decimation factor must be at least 1")]
    ZeroFactor,
    #[error("cycle {cycle_id} has {rows} rows, fewer than the decimation factor {factor}")]
    TooShort {
        cycle_id: String,
        rows: usize,
        factor: usize,
    },
    #[error("validation fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("split input contains synthetic cycle {0}; validation data must be real")]
    SyntheticInSplit(String),
    #[error("cycle {cycle_id} has source {found:?}, expected {expected:?}")]
    WrongSource {
        cycle_id: String,
        expected: Source,
        found: Source,
    },
    #[error("percent {0} outside [0, 100]")]
    InvalidPercent(f64),
    #[error("synthetic pool too small: need {needed}, have {available}")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("infeasible mix: {0}")]
    Infeasible(String),
}

/// Rounds half away from zero (so 0.33 × 1100 → 363).
pub fn round_count(x: f64) -> usize {
    x.round().max(0.0) as usize
}

/// Split one cycle into `factor` phase-offset decimated cycles.
///
/// Output `k` holds rows `k, k + factor, k + 2·factor, …` at `factor` times the input period.
pub fn decimate_augment(record: &CycleRecord, factor: usize) -> Result<Vec<CycleRecord>, PipelineError> {
    if factor == 0 {
        return Err(PipelineError::ZeroFactor);
    }
    let rows = record.samples.nrows();
    if rows < factor {
        return Err(PipelineError::TooShort {
            cycle_id: record.cycle_id.clone(),
            rows,
            factor,
        });
    }
    Ok((0..factor)
        .map(|k| CycleRecord {
            cycle_id: format!("{}_p{k}", record.cycle_id),
            source: record.source,
            label: record.label,
            sample_period_ms: record.sample_period_ms * factor as u32,
            samples: record.samples.slice(s![k..;factor, ..]).to_owned(),
            setpoints: record.setpoints,
            quality: record.quality,
        })
        .collect())
}

/// Inverse of [`decimate_augment`]: interleave phase outputs back into one matrix.
pub fn interleave(parts: &[Array2<f64>]) -> Array2<f64> {
    let factor = parts.len();
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let cols = parts.first().map_or(0, |p| p.ncols());
    let mut out = Array2::zeros((rows, cols));
    for (k, part) in parts.iter().enumerate() {
        for (i, row) in part.axis_iter(Axis(0)).enumerate() {
            out.row_mut(k + i * factor).assign(&row);
        }
    }
    out
}

/// Decimate every record of a dataset, keeping record order (phase outputs adjacent).
pub fn augment_dataset(dataset: &Dataset, factor: usize) -> Result<Dataset, PipelineError> {
    let mut records = Vec::with_capacity(dataset.len() * factor);
    for r in &dataset.records {
        records.extend(decimate_augment(r, factor)?);
    }
    Ok(Dataset {
        name: format!("{}-x{factor}", dataset.name),
        schema: dataset.schema.clone(),
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            val_fraction: 0.33,
            seed: 0,
        }
    }
}

/// Seeded train/validation split of real data. Each side keeps input order.
pub fn split_real(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), PipelineError> {
    if !(spec.val_fraction > 0.0 && spec.val_fraction < 1.0) {
        return Err(PipelineError::InvalidFraction(spec.val_fraction));
    }
    if let Some(r) = dataset.records.iter().find(|r| r.source != Source::Real) {
        return Err(PipelineError::SyntheticInSplit(r.cycle_id.clone()));
    }
    let n = dataset.len();
    let n_val = round_count(spec.val_fraction * n as f64).min(n);
    let perm = CounterRng::new(derive_seed(spec.seed, &[0x5911])).permutation(n);
    let mut is_val = vec![false; n];
    for &i in &perm[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (r, v) in dataset.records.iter().zip(is_val) {
        if v {
            val.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    let part = |suffix: &str, records| Dataset {
        name: format!("{}-{suffix}", dataset.name),
        schema: dataset.schema.clone(),
        records,
    };
    Ok((part("train", train), part("val", val)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    Additive,
    Substitutive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixAmount {
    /// Additive: synthetic share as a percent of the original real total.
    PercentOfTotal(f64),
    /// Substitutive: number of synthetic cycles in the fixed-size training set.
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub mode: MixMode,
    pub amount: MixAmount,
    pub seed: u64,
}

/// Count bookkeeping for one mixed training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixAccounting {
    pub mode: MixMode,
    /// Percent of the real total (additive) or synthetic count (substitutive).
    pub level: f64,
    pub real_count: usize,
    pub synthetic_count: usize,
    pub training_count: usize,
    /// Additive: real total plus added synthetic. Substitutive: the fixed training size.
    pub total_count: usize,
    /// Additive: synthetic / real training count. Substitutive: synthetic / fixed size.
    pub synthetic_fraction_training: f64,
    pub real_fraction_training: f64,
}

/// Counts for an additive mix, without touching any data.
pub fn additive_accounting(
    percent: f64,
    real_total: usize,
    real_train: usize,
) -> Result<MixAccounting, PipelineError> {
    if !(0.0..=100.0).contains(&percent) {
        return Err(PipelineError::InvalidPercent(percent));
    }
    let synthetic = round_count(percent / 100.0 * real_total as f64);
    Ok(MixAccounting {
        mode: MixMode::Additive,
        level: percent,
        real_count: real_train,
        synthetic_count: synthetic,
        training_count: real_train + synthetic,
        total_count: real_total + synthetic,
        synthetic_fraction_training: synthetic as f64 / real_train as f64,
        real_fraction_training: real_train as f64 / (real_train + synthetic) as f64,
    })
}

/// Counts for a substitutive mix, without touching any data.
pub fn substitutive_accounting(
    synthetic_count: usize,
    fixed_size: usize,
) -> Result<MixAccounting, PipelineError> {
    if synthetic_count > fixed_size || fixed_size == 0 {
        return Err(PipelineError::Infeasible(format!(
            "synthetic count {synthetic_count} exceeds fixed size {fixed_size}"
        )));
    }
    let real = fixed_size - synthetic_count;
    Ok(MixAccounting {
        mode: MixMode::Substitutive,
        level: synthetic_count as f64,
        real_count: real,
        synthetic_count,
        training_count: fixed_size,
        total_count: fixed_size,
        synthetic_fraction_training: synthetic_count as f64 / fixed_size as f64,
        real_fraction_training: real as f64 / fixed_size as f64,
    })
}

fn require_source(records: &[CycleRecord], expected: Source) -> Result<(), PipelineError> {
    match records.iter().find(|r| r.source != expected) {
        Some(r) => Err(PipelineError::WrongSource {
            cycle_id: r.cycle_id.clone(),
            expected,
            found: r.source,
        }),
        None => Ok(()),
    }
}

/// Draw `k` of `indices` uniformly without replacement; result keeps ascending index order.
fn sample_indices(indices: &[usize], k: usize, rng: &mut CounterRng) -> Vec<usize> {
    let mut pool = indices.to_vec();
    rng.shuffle(&mut pool);
    let mut picked = pool[..k].to_vec();
    picked.sort_unstable();
    picked
}

/// Draw `count` synthetic records whose class mix follows the pool's.
fn sample_stratified(
    pool: &Dataset,
    count: usize,
    rng: &mut CounterRng,
) -> Result<Vec<CycleRecord>, PipelineError> {
    if count > pool.len() {
        return Err(PipelineError::PoolTooSmall {
            needed: count,
            available: pool.len(),
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let good: Vec<usize> = (0..pool.len()).filter(|&i| pool.records[i].label == Label::Good).collect();
    let bad: Vec<usize> = (0..pool.len()).filter(|&i| pool.records[i].label != Label::Good).collect();
    let wanted_good = round_count(count as f64 * good.len() as f64 / pool.len() as f64);
    let n_good = wanted_good.clamp(count.saturating_sub(bad.len()), good.len());
    let mut picked = sample_indices(&good, n_good, rng);
    picked.extend(sample_indices(&bad, count - n_good, rng));
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool.records[i].clone()).collect())
}

/// All real training cycles plus a stratified synthetic sample sized from `percent` of `real_total`.
pub fn mix_additive(
    real_train: &Dataset,
    synthetic_pool: &Dataset,
    percent: f64,
    real_total: usize,
    seed: u64,
) -> Result<(Dataset, MixAccounting), PipelineError> {
    require_source(&real_train.records, Source::Real)?;
    require_source(&synthetic_pool.records, Source::Synthetic)?;
    let acc = additive_accounting(percent, real_total, real_train.len())?;
    let mut rng = CounterRng::new(derive_seed(seed, &[0xADD]));
    let synthetic = sample_stratified(synthetic_pool, acc.synthetic_count, &mut rng)?;
    let mut records = real_train.records.clone();
    records.extend(synthetic);
    Ok((
        Dataset {
            name: format!("{}+add{percent}", real_train.name),
            schema: real_train.schema.clone(),
            records,
        },
        acc,
    ))
}

/// A training set of exactly `fixed_size`: sampled real cycles plus `synthetic_count` synthetic ones.
pub fn mix_substitutive(
    real_train: &Dataset,
    synthetic_pool: &Dataset,
    synthetic_count: usize,
    fixed_size: usize,
    seed: u64,
) -> Result<(Dataset, MixAccounting), PipelineError> {
    require_source(&real_train.records, Source::Real)?;
    require_source(&synthetic_pool.records, Source::Synthetic)?;
    let acc = substitutive_accounting(synthetic_count, fixed_size)?;
    if real_train.len() < acc.real_count {
        return Err(PipelineError::Infeasible(format!(
            "need {} real cycles, have {}",
            acc.real_count,
            real_train.len()
        )));
    }
    let mut rng = CounterRng::new(derive_seed(seed, &[0x5B5]));
    let all: Vec<usize> = (0..real_train.len()).collect();
    let mut records: Vec<CycleRecord> = sample_indices(&all, acc.real_count, &mut rng)
        .into_iter()
        .map(|i| real_train.records[i].clone())
        .collect();
    records.extend(sample_stratified(synthetic_pool, synthetic_count, &mut rng)?);
    Ok((
        Dataset {
            name: format!("{}+sub{synthetic_count}", real_train.name),
            schema: real_train.schema.clone(),
            records,
        },
        acc,
    ))
}

/// Dispatch on a [`MixSpec`]. `real_total` applies to additive, `fixed_size` to substitutive.
pub fn mix(
    real_train: &Dataset,
    synthetic_pool: &Dataset,
    spec: &MixSpec,
    real_total: usize,
    fixed_size: usize,
) -> Result<(Dataset, MixAccounting), PipelineError> {
    match (spec.mode, spec.amount) {
        (MixMode::Additive, MixAmount::PercentOfTotal(p)) => {
            mix_additive(real_train, synthetic_pool, p, real_total, spec.seed)
        }
        (MixMode::Substitutive, MixAmount::Count(c)) => {
            mix_substitutive(real_train, synthetic_pool, c, fixed_size, spec.seed)
        }
        (mode, amount) => Err(PipelineError::Infeasible(format!(
            "{mode:?} mixing does not take {amount:?}"
        ))),
    }
}
