//! Commands behind the `graphormer` binary: training, evaluation, the
//! ablation matrix, attention export, parameter accounting and dataset
//! generation. Every command is a plain function so tests can drive it
//! in-process.

mod ablate;
mod attn;
mod eval;
mod params;
mod train;

use std::fmt;
use std::path::{Path, PathBuf};

use mesh_graphormer::config::{GraphormerConfig, Preset};
use mesh_graphormer::Error;

pub use ablate::{ablate, render_table, AblationRow, ABLATION_HEADER};
pub use attn::{attn_export, token_names, AttnExport, ModelSource};
pub use eval::{eval, gen_data, EvalReport, EvalSource};
pub use params::{count_report, ParamReport};
pub use train::{train, TrainSummary, CHECKPOINT_FILE, CONFIG_FILE, LOG_FILE};

/// Usage or configuration problem.
pub const EXIT_CONFIG: i32 = 2;
/// NaN or Inf during training or evaluation.
pub const EXIT_NUMERIC: i32 = 3;

pub const DEBUG_ENV: &str = "GRAPHORMER_DEBUG_CHECKS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite(_) => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::config(format!("{}: {e}", path.display()))
}

/// Where a run's configuration comes from.
#[derive(Debug, Clone)]
pub struct ConfigArgs {
    pub config: Option<PathBuf>,
    pub preset: Preset,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl Default for ConfigArgs {
    fn default() -> Self {
        Self {
            config: None,
            preset: Preset::Desk,
            seed: None,
            workers: None,
        }
    }
}

/// Preset, then the config file, then command-line overrides and the
/// debug environment variable.
pub fn resolve_config(args: &ConfigArgs) -> CliResult<GraphormerConfig> {
    let base = args.preset.config();
    let mut cfg = match &args.config {
        Some(path) => GraphormerConfig::load(path, &base)?,
        None => base,
    };
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(w) = args.workers {
        cfg.train.workers = w;
    }
    if std::env::var(DEBUG_ENV).is_ok_and(|v| v == "1") {
        cfg.train.debug_checks = true;
    }
    cfg.validate()?;
    Ok(cfg)
}
