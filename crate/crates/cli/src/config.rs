//! Run configuration: built-in defaults, overlaid by a JSON file, overlaid by
//! command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};

use calreg_core::baselines::BaselineConfig;
use calreg_core::dataio::{CsvOptions, TargetColumn};
use calreg_core::interval::CalibrationLevels;
use calreg_core::lbc::LbcConfig;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CALREG_OUT";
const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Lbc,
    Mse,
    Hnn,
    #[value(name = "mc_dropout")]
    McDropout,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lbc => "lbc",
            Method::Mse => "mse",
            Method::Hnn => "hnn",
            Method::McDropout => "mc_dropout",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub target: Option<TargetColumn>,
    pub method: Method,
    pub seed: u64,
    /// Number of cross-validation folds; 1 means a single holdout split.
    pub folds: usize,
    /// Holdout fraction used when `folds == 1`.
    pub test_fraction: f64,
    pub levels: CalibrationLevels,
    pub delimiter: char,
    pub has_header: bool,
    pub lbc: LbcConfig,
    pub baseline: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            target: None,
            method: Method::Lbc,
            seed: 0,
            folds: 5,
            test_fraction: 0.2,
            levels: CalibrationLevels::default(),
            delimiter: ',',
            has_header: true,
            lbc: LbcConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.data.is_none() {
            errors.push("no dataset given (--data)".into());
        }
        if self.target.is_none() {
            errors.push("no target column given (--target)".into());
        }
        if self.folds == 0 {
            errors.push("folds must be at least 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            errors.push(format!(
                "test fraction {} not in (0, 1)",
                self.test_fraction
            ));
        }
        if !self.delimiter.is_ascii() {
            errors.push(format!("delimiter {:?} is not ASCII", self.delimiter));
        }
        errors.extend(self.lbc.problems());
        errors.extend(self.baseline.problems());
        errors
    }

    pub fn csv_options(&self) -> CsvOptions {
        let mut opts = CsvOptions::new(self.target.clone().unwrap_or(TargetColumn::Index(0)));
        opts.delimiter = self.delimiter as u8;
        opts.has_header = self.has_header;
        opts
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Target column name, or zero-based index.
    #[arg(long)]
    pub target: Option<TargetColumn>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cross-validation folds (1 = single holdout split).
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub test_fraction: Option<f64>,
    /// Training iterations for every method.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Comma-separated calibration levels, e.g. 0.1,0.5,0.9.
    #[arg(long)]
    pub levels: Option<CalibrationLevels>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    /// Output directory [default: $CALREG_OUT/<method>, or runs/<method>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub delimiter: Option<char>,
    /// The CSV has no header row; columns are named by index.
    #[arg(long)]
    pub no_header: bool,
}

impl RunArgs {
    /// Effective configuration: flags > config file > defaults.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg);
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = &self.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = &self.target {
            cfg.target = Some(v.clone());
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.folds {
            cfg.folds = v;
        }
        if let Some(v) = self.test_fraction {
            cfg.test_fraction = v;
        }
        if let Some(v) = self.iterations {
            cfg.lbc.iterations = v;
            cfg.baseline.iterations = v;
        }
        if let Some(v) = &self.levels {
            cfg.levels = v.clone();
        }
        if let Some(v) = self.lambda1 {
            cfg.lbc.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            cfg.lbc.lambda2 = v;
        }
        if let Some(v) = self.tau {
            cfg.lbc.tau = v;
        }
        if let Some(v) = self.delimiter {
            cfg.delimiter = v;
        }
        if self.no_header {
            cfg.has_header = false;
        }
        // A single seed drives every stream; per-method seeds are derived.
        cfg.lbc.seed = cfg.seed;
        cfg.baseline.seed = cfg.seed;
    }

    pub fn out_dir(&self, method: Method) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| out_root().join(method.name()))
    }
}

pub fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}
