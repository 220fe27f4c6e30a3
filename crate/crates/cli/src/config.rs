//! Config file schema and flag merging.
//!
//! The config file is TOML. Every key is optional; flags given on the command
//! line win over file values, which win over built-in defaults.
//!
//! ```toml
//! seed = 7
//!
//! [generate]
//! count = 100
//! good_frac = 0.4
//! source = "synthetic"    # or "real"
//! noise_scale = 1.0
//!
//! [simulator]             # any SimulatorConfig field
//! sample_period_ms = 10
//!
//! [augment]
//! factor = 4
//!
//! [split]
//! val_frac = 0.33
//!
//! [mix]
//! mode = "additive"       # or "substitutive"
//! percent = 5.0
//! count = 55
//! real_total = 1100
//! fixed_size = 737
//!
//! [model]                 # any ModelConfig field
//! epochs = 50
//!
//! [sweep]
//! mode = "additive"
//! levels = [0, 5, 10, 15, 20, 25, 30]
//! runs_per_level = 50
//! workers = 1
//! val_frac = 0.33
//! real = "data/real"      # dataset directories; generated when absent
//! pool = "data/pool"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use moldsynth::lstm::ModelConfig;
use moldsynth::pipeline::MixMode;
use moldsynth::simulator::SimulatorConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SourceArg {
    Synthetic,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Additive,
    Substitutive,
}

impl From<ModeArg> for MixMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Additive => MixMode::Additive,
            ModeArg::Substitutive => MixMode::Substitutive,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateFile {
    pub count: Option<usize>,
    pub good_frac: Option<f64>,
    pub source: Option<SourceArg>,
    pub noise_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentFile {
    pub factor: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub val_frac: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixFile {
    pub mode: Option<ModeArg>,
    pub percent: Option<f64>,
    pub count: Option<usize>,
    pub real_total: Option<usize>,
    pub fixed_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub mode: Option<ModeArg>,
    pub levels: Option<Vec<f64>>,
    pub runs_per_level: Option<usize>,
    pub workers: Option<usize>,
    pub val_frac: Option<f64>,
    pub real: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub real_total: Option<usize>,
    pub fixed_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub generate: GenerateFile,
    pub simulator: Option<SimulatorConfig>,
    #[serde(default)]
    pub augment: AugmentFile,
    #[serde(default)]
    pub split: SplitFile,
    #[serde(default)]
    pub mix: MixFile,
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub sweep: SweepFile,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Model settings from the file, overridden by any flags given.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct ModelFlags {
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// LSTM layer sizes, comma separated
    #[arg(long, value_delimiter = ',')]
    pub units: Option<Vec<usize>>,
    /// Feed raw channels to the network instead of z-scores
    #[arg(long)]
    pub no_standardize: bool,
}

impl ModelFlags {
    pub fn resolve(&self, file: Option<&ModelConfig>, seed: u64) -> Result<ModelConfig, CliError> {
        let mut m = file.cloned().unwrap_or_default();
        if let Some(e) = self.epochs {
            m.epochs = e;
        }
        if let Some(b) = self.batch_size {
            m.batch_size = b;
        }
        if let Some(lr) = self.learning_rate {
            m.learning_rate = lr;
        }
        if let Some(u) = &self.units {
            m.units = u.clone();
        }
        if self.no_standardize {
            m.standardize = false;
        }
        m.seed = seed;
        m.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(m)
    }
}

/// Write the fully resolved settings of a command next to its outputs.
pub fn echo_resolved<T: Serialize>(dir: &Path, resolved: &T) -> Result<(), CliError> {
    let text = toml::to_string_pretty(resolved).map_err(|e| CliError::Runtime(format!("resolved config: {e}")))?;
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let path = dir.join("resolved_config.toml");
    fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
