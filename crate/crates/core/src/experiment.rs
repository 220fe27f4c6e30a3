//! Mixing sweeps: train and evaluate many seeded runs per synthetic-data level.
//!
//! A sweep is a grid of cells, one per `(level, run)`. Every cell draws a fresh
//! real train/validation split, mixes synthetic cycles into the training part,
//! trains a model and evaluates its final epoch on the real-only validation
//! part. Cells are independent and run on a bounded worker pool; results are
//! merged in `(level, run)` order, so reports do not depend on scheduling.
//!
//! Cell seeds are `derive_seed(base_seed, [level_index, run_index])`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lstm::{self, LstmError, ModelConfig, TrainControl, TrainingHistory};
use crate::metrics::{aggregate_runs, evaluate, EvalResult, MetricError, Running, Stat};
use crate::pipeline::{
    additive_accounting, augment_dataset, mix_additive, mix_substitutive, round_count, split_real,
    substitutive_accounting, MixAccounting, MixMode, PipelineError, SplitSpec,
};
use crate::rng::derive_seed;
use crate::simulator::{generate_dataset, FaultMix, SimError, SimulatorConfig};
use crate::storage::to_sorted_json;
use crate::types::{Dataset, Source};

/// Version of the report column layout.
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid sweep config: {0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("cell level {level} run {run}: {source}")]
    Cell {
        level: String,
        run: usize,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error("sweep cancelled")]
    Cancelled,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl ExperimentError {
    pub fn is_cancelled(&self) -> bool {
        match self {
            ExperimentError::Cancelled | ExperimentError::Lstm(LstmError::Cancelled) => true,
            ExperimentError::Cell { source, .. } => source.is_cancelled(),
            _ => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Additive levels are percents of the real total; substitutive levels are synthetic counts.
pub fn default_levels(mode: MixMode) -> Vec<f64> {
    match mode {
        MixMode::Additive => vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
        MixMode::Substitutive => vec![0.0, 55.0, 110.0, 165.0, 220.0, 275.0, 330.0],
    }
}

/// Short directory-safe name of a level: `5pct` or `55syn`.
pub fn level_label(mode: MixMode, level: f64) -> String {
    match mode {
        MixMode::Additive => format!("{level}pct"),
        MixMode::Substitutive => format!("{level}syn"),
    }
}

fn default_runs() -> usize {
    50
}
fn default_val_fraction() -> f64 {
    0.33
}
fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub mode: MixMode,
    pub levels: Vec<f64>,
    #[serde(default = "default_runs")]
    pub runs_per_level: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Base for additive percentages. Defaults to the size of the real dataset.
    #[serde(default)]
    pub real_total: Option<usize>,
    /// Training-set size for substitutive mixing. Defaults to the real training split size.
    #[serde(default)]
    pub fixed_size: Option<usize>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl SweepConfig {
    pub fn new(mode: MixMode) -> Self {
        Self {
            mode,
            levels: default_levels(mode),
            runs_per_level: default_runs(),
            base_seed: 0,
            model: ModelConfig::default(),
            val_fraction: default_val_fraction(),
            real_total: None,
            fixed_size: None,
            workers: default_workers(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.levels.is_empty() {
            return bad("levels must not be empty".into());
        }
        if self.runs_per_level == 0 {
            return bad("runs_per_level must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        for &l in &self.levels {
            let ok = match self.mode {
                MixMode::Additive => (0.0..=100.0).contains(&l),
                MixMode::Substitutive => l >= 0.0 && l.fract() == 0.0,
            };
            if !ok {
                return bad(format!("level {l} is not valid for {:?} mixing", self.mode));
            }
        }
        let mut labels: Vec<String> = self.levels.iter().map(|&l| level_label(self.mode, l)).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.levels.len() {
            return bad("levels must be distinct".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} must lie in (0, 1)", self.val_fraction));
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn cell_seed(&self, level_index: usize, run_index: usize) -> u64 {
        derive_seed(self.base_seed, &[level_index as u64, run_index as u64])
    }

    /// Count arithmetic for every level given the real dataset size. No training.
    pub fn planned_accounting(&self, real_len: usize) -> Result<Vec<MixAccounting>, ExperimentError> {
        let real_train = real_len - round_count(self.val_fraction * real_len as f64).min(real_len);
        self.levels
            .iter()
            .map(|&l| {
                Ok(match self.mode {
                    MixMode::Additive => additive_accounting(l, self.real_total.unwrap_or(real_len), real_train)?,
                    MixMode::Substitutive => substitutive_accounting(l as usize, self.fixed_size.unwrap_or(real_train))?,
                })
            })
            .collect()
    }
}

/// Outcome of one `(level, run)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub level_index: usize,
    pub level: f64,
    pub label: String,
    pub run_index: usize,
    pub seed: u64,
    pub accounting: MixAccounting,
    pub validation_count: usize,
    /// Final-epoch metrics on the real-only validation split.
    pub validation: EvalResult,
    /// Final-epoch metrics on the mixed training set.
    pub train: EvalResult,
    pub history: TrainingHistory,
}

pub fn run_cell(
    config: &SweepConfig,
    real: &Dataset,
    pool: &Dataset,
    level_index: usize,
    run_index: usize,
    cancel: Option<&AtomicBool>,
) -> Result<CellResult, ExperimentError> {
    let level = *config
        .levels
        .get(level_index)
        .ok_or_else(|| ExperimentError::Config(format!("no level with index {level_index}")))?;
    let label = level_label(config.mode, level);
    let wrap = |e: ExperimentError| ExperimentError::Cell {
        level: label.clone(),
        run: run_index,
        source: Box::new(e),
    };
    let seed = config.cell_seed(level_index, run_index);
    let inner = || -> Result<CellResult, ExperimentError> {
        let split = SplitSpec {
            val_fraction: config.val_fraction,
            seed: derive_seed(seed, &[1]),
        };
        let (real_train, val) = split_real(real, &split)?;
        let mix_seed = derive_seed(seed, &[2]);
        let (train_set, accounting) = match config.mode {
            MixMode::Additive => {
                mix_additive(&real_train, pool, level, config.real_total.unwrap_or(real.len()), mix_seed)?
            }
            MixMode::Substitutive => mix_substitutive(
                &real_train,
                pool,
                level as usize,
                config.fixed_size.unwrap_or(real_train.len()),
                mix_seed,
            )?,
        };
        debug_assert_eq!(val.count_source(Source::Synthetic), 0);
        let control = TrainControl {
            cancel,
            on_epoch: None,
        };
        let out = lstm::train_with(&config.model, &train_set, &val, derive_seed(seed, &[3]), control)?;
        Ok(CellResult {
            level_index,
            level,
            label: label.clone(),
            run_index,
            seed,
            accounting,
            validation_count: val.len(),
            validation: evaluate(&out.val_scores, &val.labels())?,
            train: evaluate(&out.train_scores, &train_set.labels())?,
            history: out.history,
        })
    };
    inner().map_err(wrap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub mean_train_acc: f64,
    pub mean_train_loss: f64,
    pub mean_val_acc: f64,
    pub mean_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub label: String,
    pub level: f64,
    pub accounting: MixAccounting,
    pub runs: usize,
    pub val_accuracy: Stat,
    pub val_loss: Stat,
    pub train_accuracy: Stat,
    pub train_loss: Stat,
    /// Validation F1.
    pub f1: Stat,
    /// Validation AUC-ROC, over runs where both classes were present.
    pub auc_roc: Option<Stat>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub report_version: u32,
    pub mode: MixMode,
    pub base_seed: u64,
    pub runs_per_level: usize,
    pub epochs: usize,
    pub levels: Vec<LevelSummary>,
    pub runs: Vec<CellResult>,
}

fn mean_curve(cells: &[&CellResult]) -> Vec<CurvePoint> {
    let epochs = cells.iter().map(|c| c.history.len()).min().unwrap_or(0);
    (0..epochs)
        .map(|e| {
            let mut acc = [Running::default(), Running::default(), Running::default(), Running::default()];
            for c in cells {
                let s = &c.history.epochs[e];
                acc[0].push(s.train_accuracy);
                acc[1].push(s.train_loss);
                acc[2].push(s.val_accuracy);
                acc[3].push(s.val_loss);
            }
            CurvePoint {
                epoch: e + 1,
                mean_train_acc: acc[0].stat().mean,
                mean_train_loss: acc[1].stat().mean,
                mean_val_acc: acc[2].stat().mean,
                mean_val_loss: acc[3].stat().mean,
            }
        })
        .collect()
}

/// Build the report from completed cells. Cells may arrive in any order.
pub fn assemble_report(config: &SweepConfig, mut cells: Vec<CellResult>) -> Result<SweepReport, ExperimentError> {
    cells.sort_by_key(|c| (c.level_index, c.run_index));
    let mut levels = Vec::with_capacity(config.levels.len());
    for (li, &level) in config.levels.iter().enumerate() {
        let group: Vec<&CellResult> = cells.iter().filter(|c| c.level_index == li).collect();
        if group.is_empty() {
            return Err(ExperimentError::Config(format!("no completed runs for level {level}")));
        }
        let val: Vec<EvalResult> = group.iter().map(|c| c.validation.clone()).collect();
        let train: Vec<EvalResult> = group.iter().map(|c| c.train.clone()).collect();
        let v = aggregate_runs(&val)?;
        let t = aggregate_runs(&train)?;
        levels.push(LevelSummary {
            label: level_label(config.mode, level),
            level,
            accounting: group[0].accounting,
            runs: group.len(),
            val_accuracy: v.accuracy,
            val_loss: v.loss,
            train_accuracy: t.accuracy,
            train_loss: t.loss,
            f1: v.f1,
            auc_roc: v.auc_roc,
            curve: mean_curve(&group),
        });
    }
    Ok(SweepReport {
        report_version: REPORT_VERSION,
        mode: config.mode,
        base_seed: config.base_seed,
        runs_per_level: config.runs_per_level,
        epochs: config.model.epochs,
        levels,
        runs: cells,
    })
}

/// A sweep that stopped early, with whatever cells finished.
#[derive(Debug)]
pub struct SweepFailure {
    pub error: ExperimentError,
    pub completed: Vec<CellResult>,
}

/// Run every cell. `cancel` is polled between and inside cells; it is also set
/// when a cell fails so the remaining workers stop promptly.
pub fn run_sweep(
    config: &SweepConfig,
    real: &Dataset,
    pool: &Dataset,
    cancel: &AtomicBool,
    on_cell: Option<&(dyn Fn(&CellResult) + Sync)>,
) -> Result<SweepReport, SweepFailure> {
    let fail = |error| SweepFailure {
        error,
        completed: Vec::new(),
    };
    config.validate().map_err(fail)?;
    let cells: Vec<(usize, usize)> = (0..config.levels.len())
        .flat_map(|l| (0..config.runs_per_level).map(move |r| (l, r)))
        .collect();
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| fail(ExperimentError::Config(format!("worker pool: {e}"))))?;
    let results: Vec<Option<Result<CellResult, ExperimentError>>> = workers.install(|| {
        cells
            .par_iter()
            .map(|&(l, r)| {
                if cancel.load(Ordering::Relaxed) {
                    return None;
                }
                let res = run_cell(config, real, pool, l, r, Some(cancel));
                match &res {
                    Ok(c) => {
                        if let Some(f) = on_cell {
                            f(c);
                        }
                    }
                    Err(_) => cancel.store(true, Ordering::Relaxed),
                }
                Some(res)
            })
            .collect()
    });
    let mut completed = Vec::new();
    let mut first_error: Option<ExperimentError> = None;
    for res in results.into_iter().flatten() {
        match res {
            Ok(c) => completed.push(c),
            // Prefer a real failure over the cancellations it triggered.
            Err(e) => match &first_error {
                None => first_error = Some(e),
                Some(prev) if prev.is_cancelled() && !e.is_cancelled() => first_error = Some(e),
                _ => {}
            },
        }
    }
    if first_error.is_none() && completed.len() < cells.len() {
        first_error = Some(ExperimentError::Cancelled);
    }
    if let Some(error) = first_error {
        completed.sort_by_key(|c| (c.level_index, c.run_index));
        return Err(SweepFailure { error, completed });
    }
    assemble_report(config, completed).map_err(fail)
}

fn opt_stat(s: &Option<Stat>) -> (String, String) {
    match s {
        Some(s) => (s.mean.to_string(), s.std.to_string()),
        None => (String::new(), String::new()),
    }
}

pub const CSV_COLUMNS: [&str; 21] = [
    "level",
    "label",
    "mode",
    "total_count",
    "training_count",
    "real_count",
    "synthetic_count",
    "synthetic_fraction",
    "runs",
    "mean_val_acc",
    "std_val_acc",
    "mean_val_loss",
    "std_val_loss",
    "mean_train_acc",
    "std_train_acc",
    "mean_train_loss",
    "std_train_loss",
    "mean_f1",
    "std_f1",
    "mean_auc_roc",
    "std_auc_roc",
];

/// One row per level. Numbers are written at full round-trip precision.
pub fn render_csv(report: &SweepReport) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    let mode = match report.mode {
        MixMode::Additive => "additive",
        MixMode::Substitutive => "substitutive",
    };
    for l in &report.levels {
        let a = &l.accounting;
        let (auc_m, auc_s) = opt_stat(&l.auc_roc);
        let fields = [
            l.level.to_string(),
            l.label.clone(),
            mode.to_string(),
            a.total_count.to_string(),
            a.training_count.to_string(),
            a.real_count.to_string(),
            a.synthetic_count.to_string(),
            a.synthetic_fraction_training.to_string(),
            l.runs.to_string(),
            l.val_accuracy.mean.to_string(),
            l.val_accuracy.std.to_string(),
            l.val_loss.mean.to_string(),
            l.val_loss.std.to_string(),
            l.train_accuracy.mean.to_string(),
            l.train_accuracy.std.to_string(),
            l.train_loss.mean.to_string(),
            l.train_loss.std.to_string(),
            l.f1.mean.to_string(),
            l.f1.std.to_string(),
            auc_m,
            auc_s,
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Human-readable table. Counts are exact; metrics are rounded to four decimals.
pub fn render_markdown(report: &SweepReport) -> String {
    let mut out = String::new();
    let (title, frac_head) = match report.mode {
        MixMode::Additive => ("Additive mixing", "synthetic / real training (%)"),
        MixMode::Substitutive => ("Substitutive mixing", "synthetic share of training (%)"),
    };
    writeln!(
        out,
        "# {title}\n\n{} runs per level, {} epochs, base seed {}. Metrics are final-epoch means over runs; std columns are population standard deviations across runs.\n",
        report.runs_per_level, report.epochs, report.base_seed
    )
    .unwrap();
    let head = [
        "level",
        "total count",
        "training count",
        "real count",
        "synthetic count",
        frac_head,
        "mean val acc",
        "std val acc",
        "mean val loss",
        "std val loss",
        "mean train acc",
        "std train acc",
        "mean train loss",
        "std train loss",
        "F1",
        "std F1",
        "AUC-ROC",
        "std AUC-ROC",
    ];
    writeln!(out, "| {} |", head.join(" | ")).unwrap();
    writeln!(out, "|{}", "---|".repeat(head.len())).unwrap();
    let f4 = |x: f64| format!("{x:.4}");
    for l in &report.levels {
        let a = &l.accounting;
        let (auc_m, auc_s) = match l.auc_roc {
            Some(s) => (f4(s.mean), f4(s.std)),
            None => ("n/a".into(), "n/a".into()),
        };
        let row = [
            l.label.clone(),
            a.total_count.to_string(),
            a.training_count.to_string(),
            a.real_count.to_string(),
            a.synthetic_count.to_string(),
            format!("{:.1}", 100.0 * a.synthetic_fraction_training),
            f4(l.val_accuracy.mean),
            f4(l.val_accuracy.std),
            f4(l.val_loss.mean),
            f4(l.val_loss.std),
            f4(l.train_accuracy.mean),
            f4(l.train_accuracy.std),
            f4(l.train_loss.mean),
            f4(l.train_loss.std),
            f4(l.f1.mean),
            f4(l.f1.std),
            auc_m,
            auc_s,
        ];
        writeln!(out, "| {} |", row.join(" | ")).unwrap();
    }
    out
}

pub fn render_curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("epoch,mean_train_acc,mean_train_loss,mean_val_acc,mean_val_loss\n");
    for p in curve {
        writeln!(
            out,
            "{},{},{},{},{}",
            p.epoch, p.mean_train_acc, p.mean_train_loss, p.mean_val_acc, p.mean_val_loss
        )
        .unwrap();
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn json<T: Serialize>(value: &T) -> String {
    to_sorted_json(value).expect("report values serialize")
}

pub fn run_file_name(run_index: usize) -> String {
    format!("{run_index:03}.json")
}

/// Write `report.csv`, `report.md`, `report.json`, `curves/<level>.csv` and `runs/<level>/<run>.json`.
pub fn write_report(report: &SweepReport, dir: &Path) -> Result<(), ExperimentError> {
    write_file(&dir.join("report.csv"), &render_csv(report))?;
    write_file(&dir.join("report.md"), &render_markdown(report))?;
    write_file(&dir.join("report.json"), &json(report))?;
    for l in &report.levels {
        write_file(&dir.join("curves").join(format!("{}.csv", l.label)), &render_curve_csv(&l.curve))?;
    }
    for c in &report.runs {
        write_file(&dir.join("runs").join(&c.label).join(run_file_name(c.run_index)), &json(c))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialResults {
    pub error: String,
    pub completed: Vec<CellResult>,
}

pub const PARTIAL_RESULTS_FILE: &str = "partial_results.json";

/// Record an aborted sweep as `partial_results.json` plus the finished run files.
pub fn write_partial(failure: &SweepFailure, dir: &Path) -> Result<PathBuf, ExperimentError> {
    let path = dir.join(PARTIAL_RESULTS_FILE);
    let partial = PartialResults {
        error: failure.error.to_string(),
        completed: failure.completed.clone(),
    };
    write_file(&path, &json(&partial))?;
    for c in &failure.completed {
        write_file(&dir.join("runs").join(&c.label).join(run_file_name(c.run_index)), &json(c))?;
    }
    Ok(path)
}

/// Recompute markdown and CSV from a saved `report.json`.
pub fn read_report(path: &Path) -> Result<SweepReport, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
}

/// Simulator settings for the stand-in "real" data.
pub fn real_simulator_config() -> SimulatorConfig {
    SimulatorConfig::default()
}

/// Simulator settings for the synthetic pool: half the sensor noise and a
/// different fault mix, so the pool differs from the stand-in real data.
pub fn synthetic_simulator_config() -> SimulatorConfig {
    SimulatorConfig {
        fault_mix: FaultMix {
            none: 0.45,
            short_shot: 0.3,
            pressure_loss: 0.15,
            cold_melt: 0.1,
        },
        ..SimulatorConfig::default()
    }
    .scale_noise(0.5)
}

pub const DEFAULT_REAL_CYCLES: usize = 275;
pub const DEFAULT_REAL_GOOD_FRACTION: f64 = 0.565;
pub const DEFAULT_SYNTHETIC_CYCLES: usize = 100;
pub const DEFAULT_SYNTHETIC_GOOD_FRACTION: f64 = 0.4;
pub const AUGMENT_FACTOR: usize = 4;

/// Simulated stand-in for measured machine data: 275 cycles, augmented to 1100, marked real.
pub fn default_real_dataset(base_seed: u64) -> Result<Dataset, ExperimentError> {
    let g = DEFAULT_REAL_GOOD_FRACTION;
    let d = generate_dataset(&real_simulator_config(), DEFAULT_REAL_CYCLES, (g, 1.0 - g), derive_seed(base_seed, &[0x5EA1]))?
        .with_source(Source::Real);
    let mut d = augment_dataset(&d, AUGMENT_FACTOR)?;
    d.name = "real".into();
    Ok(d)
}

/// Synthetic pool for one sweep: 100 cycles at 40 % Good, augmented to 400.
pub fn default_synthetic_pool(base_seed: u64) -> Result<Dataset, ExperimentError> {
    let g = DEFAULT_SYNTHETIC_GOOD_FRACTION;
    let d = generate_dataset(
        &synthetic_simulator_config(),
        DEFAULT_SYNTHETIC_CYCLES,
        (g, 1.0 - g),
        derive_seed(base_seed, &[0x5F7]),
    )?;
    let mut d = augment_dataset(&d, AUGMENT_FACTOR)?;
    d.name = "synthetic".into();
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{fixtures, Label};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            units: vec![4],
            epochs: 2,
            batch_size: 16,
            ..ModelConfig::default()
        }
    }

    fn data() -> (Dataset, Dataset) {
        let mut real = fixtures::dataset(30, 30);
        for (i, r) in real.records.iter_mut().enumerate() {
            r.samples[[0, 3]] = if r.label == Label::Good { 1.0 } else { -1.0 } + i as f64 * 1e-3;
        }
        let mut pool = fixtures::dataset(10, 10).with_source(Source::Synthetic);
        for r in &mut pool.records {
            r.cycle_id = format!("s{}", r.cycle_id);
        }
        (real, pool)
    }

    fn config(mode: MixMode, levels: Vec<f64>, runs: usize) -> SweepConfig {
        SweepConfig {
            levels,
            runs_per_level: runs,
            model: tiny_model(),
            ..SweepConfig::new(mode)
        }
    }

    #[test]
    fn planned_counts_additive() {
        let acc = SweepConfig::new(MixMode::Additive).planned_accounting(1100).unwrap();
        let totals: Vec<usize> = acc.iter().map(|a| a.total_count).collect();
        let training: Vec<usize> = acc.iter().map(|a| a.training_count).collect();
        assert_eq!(totals, vec![1100, 1155, 1210, 1265, 1320, 1375, 1430]);
        assert_eq!(training, vec![737, 792, 847, 902, 957, 1012, 1067]);
    }

    #[test]
    fn planned_counts_substitutive() {
        let acc = SweepConfig::new(MixMode::Substitutive).planned_accounting(1100).unwrap();
        let pairs: Vec<(usize, usize)> = acc.iter().map(|a| (a.real_count, a.synthetic_count)).collect();
        assert_eq!(
            pairs,
            vec![(737, 0), (682, 55), (627, 110), (572, 165), (517, 220), (462, 275), (407, 330)]
        );
        assert!(acc.iter().all(|a| a.training_count == 737));
    }

    #[test]
    fn labels() {
        assert_eq!(level_label(MixMode::Additive, 5.0), "5pct");
        assert_eq!(level_label(MixMode::Substitutive, 55.0), "55syn");
        assert_eq!(level_label(MixMode::Additive, 2.5), "2.5pct");
    }

    #[test]
    fn validate_rejects_bad_configs() {
        assert!(config(MixMode::Additive, vec![], 1).validate().is_err());
        assert!(config(MixMode::Additive, vec![0.0], 0).validate().is_err());
        assert!(config(MixMode::Additive, vec![120.0], 1).validate().is_err());
        assert!(config(MixMode::Substitutive, vec![5.5], 1).validate().is_err());
        assert!(config(MixMode::Additive, vec![5.0, 5.0], 1).validate().is_err());
    }

    #[test]
    fn cell_is_deterministic_and_val_is_real() {
        let (real, pool) = data();
        let cfg = config(MixMode::Additive, vec![0.0, 30.0], 1);
        let a = run_cell(&cfg, &real, &pool, 1, 0, None).unwrap();
        let b = run_cell(&cfg, &real, &pool, 1, 0, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.accounting.synthetic_count, 18);
        assert_eq!(a.validation_count, 20);
        assert_eq!(a.validation.confusion.total(), 20);
        assert_eq!(a.train.confusion.total(), 40 + 18);
    }

    #[test]
    fn single_cell_report_equals_run() {
        let (real, pool) = data();
        let cfg = config(MixMode::Additive, vec![0.0], 1);
        let report = run_sweep(&cfg, &real, &pool, &AtomicBool::new(false), None).unwrap();
        assert_eq!(report.levels.len(), 1);
        let run = &report.runs[0];
        assert_eq!(report.levels[0].val_accuracy.mean, run.validation.accuracy);
        assert_eq!(report.levels[0].val_accuracy.std, 0.0);
        assert_eq!(report.levels[0].curve.len(), 2);
        assert_eq!(report.levels[0].curve[1].mean_val_acc, run.history.epochs[1].val_accuracy);
    }

    #[test]
    fn report_independent_of_worker_count() {
        let (real, pool) = data();
        let mut cfg = config(MixMode::Substitutive, vec![0.0, 10.0], 2);
        let one = run_sweep(&cfg, &real, &pool, &AtomicBool::new(false), None).unwrap();
        cfg.workers = 3;
        let three = run_sweep(&cfg, &real, &pool, &AtomicBool::new(false), None).unwrap();
        assert_eq!(render_csv(&one), render_csv(&three));
        assert_eq!(one.runs, three.runs);
        for l in &one.levels {
            let runs: Vec<EvalResult> =
                one.runs.iter().filter(|c| c.label == l.label).map(|c| c.validation.clone()).collect();
            let agg = aggregate_runs(&runs).unwrap();
            assert!((agg.accuracy.mean - l.val_accuracy.mean).abs() <= 1e-12);
            assert!((agg.f1.std - l.f1.std).abs() <= 1e-12);
        }
    }

    #[test]
    fn cancelled_sweep_reports_partial() {
        let (real, pool) = data();
        let cfg = config(MixMode::Additive, vec![0.0], 2);
        let err = run_sweep(&cfg, &real, &pool, &AtomicBool::new(true), None).unwrap_err();
        assert!(err.error.is_cancelled());
        assert!(err.completed.is_empty());
    }

    #[test]
    fn failing_cell_names_itself() {
        let (real, pool) = data();
        // The pool holds 20 cycles; 60 % of 60 needs 36.
        let cfg = config(MixMode::Additive, vec![0.0, 60.0], 1);
        let err = run_sweep(&cfg, &real, &pool, &AtomicBool::new(false), None).unwrap_err();
        let msg = err.error.to_string();
        assert!(msg.contains("60pct") && msg.contains("pool too small"), "{msg}");
    }

    #[test]
    fn rendering_is_stable_and_round_trips() {
        let (real, pool) = data();
        let cfg = config(MixMode::Additive, vec![0.0, 10.0], 2);
        let report = run_sweep(&cfg, &real, &pool, &AtomicBool::new(false), None).unwrap();
        assert_eq!(render_csv(&report), render_csv(&report));
        let md = render_markdown(&report);
        assert_eq!(md, render_markdown(&report));
        for h in ["level", "total count", "training count", "mean val acc", "mean val loss", "mean train acc", "mean train loss", "F1", "AUC-ROC", "std val acc"] {
            assert!(md.contains(h), "{h}");
        }
        let csv = render_csv(&report);
        let row: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
        let col = |name: &str| row[CSV_COLUMNS.iter().position(|c| *c == name).unwrap()];
        assert_eq!(col("mean_val_acc").parse::<f64>().unwrap(), report.levels[1].val_accuracy.mean);
        assert_eq!(col("std_train_loss").parse::<f64>().unwrap(), report.levels[1].train_loss.std);
        assert_eq!(col("total_count"), "66");

        let dir = tempfile::tempdir().unwrap();
        write_report(&report, dir.path()).unwrap();
        assert!(dir.path().join("curves/10pct.csv").is_file());
        assert!(dir.path().join("runs/0pct/001.json").is_file());
        let back = read_report(&dir.path().join("report.json")).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn default_datasets_have_expected_sizes() {
        let real = default_real_dataset(1).unwrap();
        assert_eq!(real.len(), 1100);
        assert_eq!(real.count_source(Source::Real), 1100);
        assert_eq!(real.count(Label::Good), 4 * 155);
        let pool = default_synthetic_pool(1).unwrap();
        assert_eq!(pool.len(), 400);
        assert_eq!(pool.count(Label::Good), 160);
        assert_eq!(pool.count_source(Source::Synthetic), 400);
    }
}
