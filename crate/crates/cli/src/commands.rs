use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use moldsynth::experiment::{
    default_real_dataset, default_synthetic_pool, level_label, read_report, run_sweep, write_partial, write_report,
    CellResult, ExperimentError, SweepConfig,
};
use moldsynth::lstm::{self, EpochStats, LstmError, Model, ModelConfig, TrainControl};
use moldsynth::metrics::{evaluate, EvalResult, MetricError};
use moldsynth::pipeline::{augment_dataset, mix, split_real, MixAccounting, MixAmount, MixMode, MixSpec, PipelineError, SplitSpec};
use moldsynth::simulator::{generate_dataset, SimError, SimulatorConfig};
use moldsynth::storage::{read_dataset, to_sorted_json, write_dataset, StorageError};
use moldsynth::{class_balance, Dataset, FeatureSchema, Label, Source};
use serde::{Deserialize, Serialize};

use crate::config::{echo_resolved, FileConfig, ModeArg, SourceArg};
use crate::{Cli, CliError, Command, OUTPUT_ROOT_ENV};

fn from_storage(e: StorageError) -> CliError {
    CliError::Data(e.to_string())
}

fn from_lstm(e: LstmError) -> CliError {
    match e {
        LstmError::Cancelled => CliError::Interrupted(e.to_string()),
        LstmError::InvalidConfig(_) => CliError::Config(e.to_string()),
        LstmError::NonFinite { .. } => CliError::Runtime(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

fn from_pipeline(e: PipelineError) -> CliError {
    match e {
        PipelineError::ZeroFactor | PipelineError::InvalidFraction(_) | PipelineError::InvalidPercent(_) => {
            CliError::Config(e.to_string())
        }
        _ => CliError::Data(e.to_string()),
    }
}

fn from_sim(e: SimError) -> CliError {
    match e {
        SimError::NonFinite { .. } => CliError::Runtime(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

fn from_metric(e: MetricError) -> CliError {
    CliError::Data(e.to_string())
}

fn from_experiment(e: ExperimentError) -> CliError {
    if e.is_cancelled() {
        return CliError::Interrupted(e.to_string());
    }
    let kind = innermost(&e);
    let msg = e.to_string();
    match kind {
        ExperimentError::Config(_) => CliError::Config(msg),
        ExperimentError::Lstm(LstmError::InvalidConfig(_)) => CliError::Config(msg),
        ExperimentError::Lstm(LstmError::NonFinite { .. }) => CliError::Runtime(msg),
        ExperimentError::Simulation(SimError::NonFinite { .. }) => CliError::Runtime(msg),
        ExperimentError::Simulation(_) => CliError::Config(msg),
        _ => CliError::Data(msg),
    }
}

fn innermost(e: &ExperimentError) -> &ExperimentError {
    match e {
        ExperimentError::Cell { source, .. } => innermost(source),
        other => other,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = to_sorted_json(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_text(path, &text)
}

fn load(dir: &Path) -> Result<Dataset, CliError> {
    read_dataset(dir, &FeatureSchema::canonical()).map_err(from_storage)
}

fn output_dir(cli: &Option<PathBuf>, file: &Option<PathBuf>, command: &str) -> PathBuf {
    if let Some(o) = cli.clone().or_else(|| file.clone()) {
        return o;
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("moldsynth-out"));
    root.join(command)
}

fn balance_line(d: &Dataset) -> Result<String, CliError> {
    let (g, ng) = class_balance(d).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(format!(
        "{} Good ({:.1}%), {} NotGood ({:.1}%)",
        d.count(Label::Good),
        100.0 * g,
        d.count(Label::NotGood),
        100.0 * ng
    ))
}

#[derive(Serialize)]
struct GenerateResolved {
    command: &'static str,
    seed: u64,
    output: PathBuf,
    count: usize,
    good_frac: f64,
    source: SourceArg,
    noise_scale: f64,
    simulator: SimulatorConfig,
}

#[derive(Serialize)]
struct AugmentResolved {
    command: &'static str,
    seed: u64,
    output: PathBuf,
    input: PathBuf,
    factor: usize,
}

#[derive(Serialize)]
struct SplitResolved {
    command: &'static str,
    seed: u64,
    output: PathBuf,
    input: PathBuf,
    val_frac: f64,
}

/// Written by `split` so that `mix` can find the pre-split size.
#[derive(Debug, Serialize, Deserialize)]
struct SplitRecord {
    source_count: usize,
    train_count: usize,
    val_count: usize,
    val_fraction: f64,
    seed: u64,
}

const SPLIT_RECORD: &str = "split.json";

#[derive(Serialize)]
struct MixResolved {
    command: &'static str,
    seed: u64,
    output: PathBuf,
    real: PathBuf,
    pool: PathBuf,
    mode: ModeArg,
    percent: Option<f64>,
    count: Option<usize>,
    real_total: usize,
    fixed_size: usize,
}

#[derive(Serialize)]
struct TrainResolved {
    command: &'static str,
    seed: u64,
    output: PathBuf,
    train: PathBuf,
    val: PathBuf,
    model: ModelConfig,
}

#[derive(Serialize)]
struct EvaluateResolved {
    command: &'static str,
    output: PathBuf,
    model: PathBuf,
    data: PathBuf,
}

#[derive(Serialize)]
struct SweepResolved {
    command: &'static str,
    output: PathBuf,
    real: Option<PathBuf>,
    pool: Option<PathBuf>,
    sweep: SweepConfig,
}

#[derive(Serialize)]
struct Metrics {
    count: usize,
    #[serde(flatten)]
    result: EvalResult,
}

#[derive(Serialize)]
struct TrainMetrics {
    train: Metrics,
    validation: Metrics,
}

fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    for e in history {
        writeln!(out, "{},{},{},{},{}", e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy).unwrap();
    }
    out
}

fn auc_text(r: &EvalResult) -> String {
    r.auc_roc.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"))
}

pub fn run(cli: Cli, cancel: &AtomicBool) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let out = match &cli.command {
        Command::Report { input } if cli.output.is_none() && file.output.is_none() => input.clone(),
        c => output_dir(&cli.output, &file.output, c.name()),
    };
    let verbose = cli.verbose;

    match cli.command {
        Command::Generate {
            count,
            good_frac,
            source,
            noise_scale,
        } => {
            let count = count.or(file.generate.count).unwrap_or(100);
            let good_frac = good_frac.or(file.generate.good_frac).unwrap_or(0.4);
            let source = source.or(file.generate.source).unwrap_or(SourceArg::Synthetic);
            let noise_scale = noise_scale.or(file.generate.noise_scale).unwrap_or(1.0);
            if !(0.0..=1.0).contains(&good_frac) {
                return Err(CliError::Config(format!("good-frac {good_frac} must lie in [0, 1]")));
            }
            if !(noise_scale.is_finite() && noise_scale >= 0.0) {
                return Err(CliError::Config(format!("noise-scale {noise_scale} must be non-negative")));
            }
            let sim = file.simulator.clone().unwrap_or_default().scale_noise(noise_scale);
            sim.validate().map_err(from_sim)?;
            let mut d = generate_dataset(&sim, count, (good_frac, 1.0 - good_frac), seed).map_err(from_sim)?;
            if source == SourceArg::Real {
                d = d.with_source(Source::Real);
                d.name = "real".into();
                // Keep ids distinct from a synthetic pool drawn with the same seed.
                for r in &mut d.records {
                    r.cycle_id = format!("real-{}", r.cycle_id);
                }
            }
            write_dataset(&d, &out, None).map_err(from_storage)?;
            echo_resolved(
                &out,
                &GenerateResolved {
                    command: "generate",
                    seed,
                    output: out.clone(),
                    count,
                    good_frac,
                    source,
                    noise_scale,
                    simulator: sim,
                },
            )?;
            println!("wrote {} cycles to {}: {}", d.len(), out.display(), balance_line(&d)?);
        }

        Command::Augment { input, factor } => {
            let factor = factor.or(file.augment.factor).unwrap_or(4);
            let d = load(&input)?;
            let a = augment_dataset(&d, factor).map_err(from_pipeline)?;
            write_dataset(&a, &out, None).map_err(from_storage)?;
            echo_resolved(
                &out,
                &AugmentResolved {
                    command: "augment",
                    seed,
                    output: out.clone(),
                    input,
                    factor,
                },
            )?;
            println!("augmented {} cycles to {} in {}: {}", d.len(), a.len(), out.display(), balance_line(&a)?);
        }

        Command::Split { input, val_frac } => {
            let val_frac = val_frac.or(file.split.val_frac).unwrap_or(0.33);
            let d = load(&input)?;
            let (train, val) = split_real(&d, &SplitSpec { val_fraction: val_frac, seed }).map_err(from_pipeline)?;
            write_dataset(&train, &out.join("train"), Some("train")).map_err(from_storage)?;
            write_dataset(&val, &out.join("val"), Some("val")).map_err(from_storage)?;
            write_json(
                &out.join(SPLIT_RECORD),
                &SplitRecord {
                    source_count: d.len(),
                    train_count: train.len(),
                    val_count: val.len(),
                    val_fraction: val_frac,
                    seed,
                },
            )?;
            echo_resolved(
                &out,
                &SplitResolved {
                    command: "split",
                    seed,
                    output: out.clone(),
                    input,
                    val_frac,
                },
            )?;
            println!("split {} cycles into {} train / {} val under {}", d.len(), train.len(), val.len(), out.display());
        }

        Command::Mix {
            real,
            pool,
            mode,
            percent,
            count,
            real_total,
            fixed_size,
        } => {
            let mode = mode.or(file.mix.mode).unwrap_or(ModeArg::Additive);
            let percent = percent.or(file.mix.percent);
            let count = count.or(file.mix.count);
            let real_set = load(&real)?;
            let pool_set = load(&pool)?;
            let recorded_total = real
                .parent()
                .map(|p| p.join(SPLIT_RECORD))
                .and_then(|p| fs::read_to_string(p).ok())
                .and_then(|t| serde_json::from_str::<SplitRecord>(&t).ok())
                .filter(|r| r.train_count == real_set.len())
                .map(|r| r.source_count);
            let real_total = real_total.or(file.mix.real_total).or(recorded_total).unwrap_or(real_set.len());
            let fixed_size = fixed_size.or(file.mix.fixed_size).unwrap_or(real_set.len());
            let amount = match mode {
                ModeArg::Additive => MixAmount::PercentOfTotal(
                    percent.ok_or_else(|| CliError::Config("additive mixing needs --percent".into()))?,
                ),
                ModeArg::Substitutive => MixAmount::Count(
                    count.ok_or_else(|| CliError::Config("substitutive mixing needs --count".into()))?,
                ),
            };
            let spec = MixSpec {
                mode: mode.into(),
                amount,
                seed,
            };
            let (mixed, acc) = mix(&real_set, &pool_set, &spec, real_total, fixed_size).map_err(from_pipeline)?;
            write_dataset(&mixed, &out, Some("train")).map_err(from_storage)?;
            write_json(&out.join("accounting.json"), &acc)?;
            echo_resolved(
                &out,
                &MixResolved {
                    command: "mix",
                    seed,
                    output: out.clone(),
                    real,
                    pool,
                    mode,
                    percent,
                    count,
                    real_total,
                    fixed_size,
                },
            )?;
            println!("{}", accounting_line(&acc));
            println!("wrote {} cycles to {}", mixed.len(), out.display());
        }

        Command::Train { train, val, model } => {
            let cfg = model.resolve(file.model.as_ref(), seed)?;
            let train_set = load(&train)?;
            let val_set = load(&val)?;
            let progress = |e: &EpochStats| {
                eprintln!(
                    "epoch {:>3}: train loss {:.4} acc {:.4} | val loss {:.4} acc {:.4}",
                    e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
                );
            };
            let control = TrainControl {
                cancel: Some(cancel),
                on_epoch: (verbose > 0).then_some(&progress as &(dyn Fn(&EpochStats) + Sync)),
            };
            let outcome = lstm::train_with(&cfg, &train_set, &val_set, seed, control).map_err(from_lstm)?;
            let tr = evaluate(&outcome.train_scores, &train_set.labels()).map_err(from_metric)?;
            let va = evaluate(&outcome.val_scores, &val_set.labels()).map_err(from_metric)?;
            outcome.model.save(&out.join("model.json")).map_err(from_lstm)?;
            write_text(&out.join("history.csv"), &history_csv(&outcome.history.epochs))?;
            write_json(
                &out.join("metrics.json"),
                &TrainMetrics {
                    train: Metrics {
                        count: train_set.len(),
                        result: tr.clone(),
                    },
                    validation: Metrics {
                        count: val_set.len(),
                        result: va.clone(),
                    },
                },
            )?;
            echo_resolved(
                &out,
                &TrainResolved {
                    command: "train",
                    seed,
                    output: out.clone(),
                    train,
                    val,
                    model: cfg,
                },
            )?;
            println!(
                "validation: accuracy {:.4}, loss {:.4}, F1 {:.4}, AUC-ROC {}",
                va.accuracy,
                va.loss,
                va.f1,
                auc_text(&va)
            );
            println!("model written to {}", out.join("model.json").display());
        }

        Command::Evaluate { model, data } => {
            let m = Model::load(&model).map_err(from_lstm)?;
            let d = load(&data)?;
            let scores = m.predict(&d).map_err(from_lstm)?;
            let r = evaluate(&scores, &d.labels()).map_err(from_metric)?;
            write_json(
                &out.join("metrics.json"),
                &Metrics {
                    count: d.len(),
                    result: r.clone(),
                },
            )?;
            echo_resolved(
                &out,
                &EvaluateResolved {
                    command: "evaluate",
                    output: out.clone(),
                    model,
                    data,
                },
            )?;
            println!(
                "{} cycles: accuracy {:.4}, loss {:.4}, F1 {:.4}, AUC-ROC {}",
                d.len(),
                r.accuracy,
                r.loss,
                r.f1,
                auc_text(&r)
            );
        }

        Command::Sweep {
            mode,
            levels,
            runs_per_level,
            workers,
            val_frac,
            real,
            pool,
            real_total,
            fixed_size,
            model,
        } => {
            let sf = &file.sweep;
            let mode: MixMode = mode.or(sf.mode).unwrap_or(ModeArg::Additive).into();
            let mut cfg = SweepConfig::new(mode);
            cfg.base_seed = seed;
            if let Some(l) = levels.or_else(|| sf.levels.clone()) {
                cfg.levels = l;
            }
            if let Some(r) = runs_per_level.or(sf.runs_per_level) {
                cfg.runs_per_level = r;
            }
            if let Some(w) = workers.or(sf.workers) {
                cfg.workers = w;
            }
            if let Some(v) = val_frac.or(sf.val_frac) {
                cfg.val_fraction = v;
            }
            cfg.real_total = real_total.or(sf.real_total);
            cfg.fixed_size = fixed_size.or(sf.fixed_size);
            cfg.model = model.resolve(file.model.as_ref(), seed)?;
            cfg.validate().map_err(from_experiment)?;
            let real = real.or_else(|| sf.real.clone());
            let pool = pool.or_else(|| sf.pool.clone());

            let real_set = match &real {
                Some(p) => load(p)?,
                None => default_real_dataset(seed).map_err(from_experiment)?,
            };
            let pool_set = match &pool {
                Some(p) => load(p)?,
                None => default_synthetic_pool(seed).map_err(from_experiment)?,
            };
            echo_resolved(
                &out,
                &SweepResolved {
                    command: "sweep",
                    output: out.clone(),
                    real: real.clone(),
                    pool: pool.clone(),
                    sweep: cfg.clone(),
                },
            )?;
            if verbose > 0 {
                eprintln!(
                    "sweep: {} levels x {} runs, real {} cycles, pool {} cycles",
                    cfg.levels.len(),
                    cfg.runs_per_level,
                    real_set.len(),
                    pool_set.len()
                );
            }
            let progress = |c: &CellResult| {
                eprintln!(
                    "level {} run {}: val acc {:.4}, val loss {:.4}",
                    c.label, c.run_index, c.validation.accuracy, c.validation.loss
                );
            };
            let on_cell = (verbose > 0).then_some(&progress as &(dyn Fn(&CellResult) + Sync));
            match run_sweep(&cfg, &real_set, &pool_set, cancel, on_cell) {
                Ok(report) => {
                    write_report(&report, &out).map_err(from_experiment)?;
                    for l in &report.levels {
                        println!(
                            "{:>8}: total {:>5}, training {:>5}, val acc {:.4}, val loss {:.4}",
                            level_label(report.mode, l.level),
                            l.accounting.total_count,
                            l.accounting.training_count,
                            l.val_accuracy.mean,
                            l.val_loss.mean
                        );
                    }
                    println!("report written to {}", out.display());
                }
                Err(failure) => {
                    let path = write_partial(&failure, &out).map_err(from_experiment)?;
                    eprintln!(
                        "{} of {} cells finished; partial results in {}",
                        failure.completed.len(),
                        cfg.levels.len() * cfg.runs_per_level,
                        path.display()
                    );
                    return Err(from_experiment(failure.error));
                }
            }
        }

        Command::Report { input } => {
            let report = read_report(&input.join("report.json")).map_err(from_experiment)?;
            write_report(&report, &out).map_err(from_experiment)?;
            println!("rendered {} levels into {}", report.levels.len(), out.display());
        }
    }
    Ok(())
}

fn accounting_line(a: &MixAccounting) -> String {
    format!(
        "{:?}: total {}, training {} ({} real + {} synthetic), synthetic/real {:.1}%",
        a.mode,
        a.total_count,
        a.training_count,
        a.real_count,
        a.synthetic_count,
        100.0 * a.synthetic_fraction_training
    )
}
