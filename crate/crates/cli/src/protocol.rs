//! Fold-level fitting, prediction and persistence for every method.

use std::path::{Path, PathBuf};

use calreg_core::baselines::{
    predict_hnn, predict_mc_dropout, predict_mse, predict_point, train_hnn, train_mc_dropout,
    train_mse,
};
use calreg_core::dataio::{
    load_csv, make_splits, standardize, Dataset, LoadReport, SplitPlan, Standardization,
};
use calreg_core::fsutil::write_atomic;
use calreg_core::interval::IntervalPrediction;
use calreg_core::lbc::{history_to_csv, train_lbc, HistoryRecord, LbcModel};
use calreg_core::metrics::{calibration_report, rmse, CalibrationReport};
use calreg_core::nn::{Checkpoint, Mlp};
use calreg_core::rng::{derive_seed, stream};
use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};
use crate::error::{CliError, CliResult};

pub const CONFIG_FILE: &str = "config.json";
pub const LOAD_REPORT_FILE: &str = "load_report.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const STATS_FILE: &str = "standardization.json";
pub const HISTORY_FILE: &str = "history.csv";

/// Loaded data and split plan for a validated configuration.
pub struct Prepared {
    pub config: RunConfig,
    pub data: Dataset,
    pub load_report: LoadReport,
    pub plan: SplitPlan,
}

impl Prepared {
    /// Validation and loading failures are configuration errors (exit 1).
    pub fn new(config: RunConfig) -> CliResult<Self> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(CliError::Config(problems));
        }
        let path = config.data.clone().expect("validated");
        let (data, load_report) = load_csv(&path, &config.csv_options())
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let plan = make_splits(data.len(), config.test_fraction, config.folds, config.seed)
            .map_err(|e| CliError::config(e.to_string()))?;
        Ok(Self {
            config,
            data,
            load_report,
            plan,
        })
    }

    pub fn num_folds(&self) -> usize {
        self.config.folds
    }

    /// `(train, test)` row indices; a single fold is the holdout split.
    pub fn fold_indices(&self, k: usize) -> (Vec<usize>, Vec<usize>) {
        if self.config.folds == 1 {
            (
                self.plan.train_indices.clone(),
                self.plan.test_indices.clone(),
            )
        } else {
            self.plan.fold(k)
        }
    }

    pub fn fold_seed(&self, k: usize) -> u64 {
        derive_seed(self.config.seed, stream::FOLD, k as u64)
    }

    /// Standardized train/test sets (statistics fitted on train) and the
    /// raw test targets.
    pub fn fold_data(&self, k: usize) -> CliResult<FoldData> {
        let (tr, te) = self.fold_indices(k);
        let (train, test) = (self.data.select(&tr), self.data.select(&te));
        let (train_s, mut others, stats) = standardize(&train, &[&test])
            .map_err(|e| CliError::runtime(&format!("fold {k}"), e))?;
        Ok(FoldData {
            train: train_s,
            test: others.remove(0),
            test_targets: test.targets,
            stats,
        })
    }
}

pub struct FoldData {
    pub train: Dataset,
    pub test: Dataset,
    pub test_targets: Array1<f64>,
    pub stats: Standardization,
}

pub fn fold_dir(out: &Path, k: usize) -> PathBuf {
    out.join(format!("fold_{k}"))
}

/// A trained model of any method, in standardized units.
pub enum Fitted {
    Lbc(LbcModel),
    Mse { model: Mlp, residual_std: f64 },
    Hnn(Mlp),
    McDropout(Mlp),
}

impl Fitted {
    pub fn train(
        cfg: &RunConfig,
        data: &Dataset,
        seed: u64,
    ) -> calreg_core::Result<(Self, Vec<HistoryRecord>)> {
        let mut base = cfg.baseline.clone();
        base.seed = seed;
        Ok(match cfg.method {
            Method::Lbc => {
                let mut lbc = cfg.lbc.clone();
                lbc.seed = seed;
                let (model, history) = train_lbc(data, &lbc, &cfg.levels, None)?;
                (Fitted::Lbc(model), history)
            }
            Method::Mse => {
                let model = train_mse(data, &base)?;
                let residual_std = residual_std(&model, data)?;
                (
                    Fitted::Mse {
                        model,
                        residual_std,
                    },
                    Vec::new(),
                )
            }
            Method::Hnn => (Fitted::Hnn(train_hnn(data, &base)?), Vec::new()),
            Method::McDropout => (
                Fitted::McDropout(train_mc_dropout(data, &base)?),
                Vec::new(),
            ),
        })
    }

    /// Intervals in standardized units. MC passes use the stream of `seed`.
    pub fn predict(
        &self,
        cfg: &RunConfig,
        x: ArrayView2<f64>,
        seed: u64,
    ) -> calreg_core::Result<IntervalPrediction> {
        match self {
            Fitted::Lbc(model) => model.predict(x),
            Fitted::Mse {
                model,
                residual_std,
            } => predict_mse(model, x, *residual_std)?.intervals(&cfg.levels),
            Fitted::Hnn(model) => {
                predict_hnn(model, x, cfg.baseline.log_var_floor)?.intervals(&cfg.levels)
            }
            Fitted::McDropout(model) => predict_mc_dropout(
                model,
                x,
                cfg.baseline.dropout_rate,
                cfg.baseline.mc_passes,
                seed,
            )?
            .intervals(&cfg.levels),
        }
    }

    pub fn checkpoints(&self, cfg: &RunConfig) -> Vec<(&'static str, Checkpoint)> {
        match self {
            Fitted::Lbc(m) => vec![
                (
                    "mean_model.json",
                    Checkpoint::from_model(&m.mean_model, "lbc_mean"),
                ),
                (
                    "width_model.json",
                    Checkpoint::from_model(&m.width_model, "lbc_width"),
                ),
            ],
            Fitted::Mse { model, .. } => vec![("model.json", Checkpoint::from_model(model, "mse"))],
            Fitted::Hnn(model) => vec![("model.json", Checkpoint::from_model(model, "hnn"))],
            Fitted::McDropout(model) => vec![(
                "model.json",
                Checkpoint::from_model(model, "mc_dropout").with_dropout(cfg.baseline.dropout_rate),
            )],
        }
    }

    /// Reloads checkpoints written by [`Fitted::checkpoints`]. The squared-error
    /// residual scale is recomputed from the fold's training data.
    pub fn load(cfg: &RunConfig, dir: &Path, train: &Dataset) -> calreg_core::Result<Self> {
        let load = |name: &str| Checkpoint::load(dir.join(name))?.to_model();
        Ok(match cfg.method {
            Method::Lbc => Fitted::Lbc(LbcModel::new(
                load("mean_model.json")?,
                load("width_model.json")?,
                cfg.levels.clone(),
            )?),
            Method::Mse => {
                let model = load("model.json")?;
                let residual_std = residual_std(&model, train)?;
                Fitted::Mse {
                    model,
                    residual_std,
                }
            }
            Method::Hnn => Fitted::Hnn(load("model.json")?),
            Method::McDropout => Fitted::McDropout(load("model.json")?),
        })
    }
}

fn residual_std(model: &Mlp, data: &Dataset) -> calreg_core::Result<f64> {
    let pred = predict_point(model, data.features.view())?;
    rmse(data.targets.view(), pred.view())
}

/// Test predictions of one fold in original units.
pub struct FoldPrediction {
    pub targets: Array1<f64>,
    pub prediction: IntervalPrediction,
}

impl FoldPrediction {
    pub fn report(&self, cfg: &RunConfig) -> calreg_core::Result<CalibrationReport> {
        calibration_report(self.targets.view(), &self.prediction, &cfg.levels)
    }
}

pub fn predict_fold(
    prep: &Prepared,
    fitted: &Fitted,
    fold: &FoldData,
    k: usize,
) -> calreg_core::Result<FoldPrediction> {
    let pred = fitted.predict(&prep.config, fold.test.features.view(), prep.fold_seed(k))?;
    Ok(FoldPrediction {
        targets: fold.test_targets.clone(),
        prediction: pred.unstandardize(&fold.stats),
    })
}

/// Trains fold `k`, writes its artifacts and returns the test report.
pub fn train_fold(prep: &Prepared, out: &Path, k: usize) -> CliResult<CalibrationReport> {
    let ctx = format!("fold {k}");
    let fold = prep.fold_data(k)?;
    let (fitted, history) = Fitted::train(&prep.config, &fold.train, prep.fold_seed(k))
        .map_err(|e| CliError::runtime(&ctx, e))?;
    let report = predict_fold(prep, &fitted, &fold, k)
        .and_then(|p| p.report(&prep.config))
        .map_err(|e| CliError::runtime(&ctx, e))?;

    let dir = fold_dir(out, k);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::runtime(&ctx, e))?;
    for (name, ckpt) in fitted.checkpoints(&prep.config) {
        ckpt.save(dir.join(name))
            .map_err(|e| CliError::runtime(&ctx, e))?;
    }
    if prep.config.method == Method::Lbc {
        write_text(&dir.join(HISTORY_FILE), &history_to_csv(&history))?;
    }
    write_json(&dir.join(STATS_FILE), &fold.stats)?;
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Reloads fold `k` from `out` and predicts its test set.
pub fn reload_fold(
    prep: &Prepared,
    out: &Path,
    k: usize,
) -> CliResult<(FoldData, Fitted, FoldPrediction)> {
    let ctx = format!("fold {k}");
    let fold = prep.fold_data(k)?;
    let fitted = Fitted::load(&prep.config, &fold_dir(out, k), &fold.train)
        .map_err(|e| CliError::runtime(&ctx, e))?;
    let pred = predict_fold(prep, &fitted, &fold, k).map_err(|e| CliError::runtime(&ctx, e))?;
    Ok((fold, fitted, pred))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation over folds (0 for a single fold).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_test: usize,
    pub rmse: f64,
    pub ece_mean: f64,
    pub ece_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub folds: usize,
    pub n_samples: usize,
    pub rmse: MeanStd,
    pub ece_mean: MeanStd,
    pub ece_sum: MeanStd,
    pub per_fold: Vec<FoldSummary>,
}

impl Summary {
    pub fn new(method: Method, n_samples: usize, reports: &[CalibrationReport]) -> Self {
        let pick = |f: fn(&CalibrationReport) -> f64| {
            MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>())
        };
        Self {
            method,
            folds: reports.len(),
            n_samples,
            rmse: pick(|r| r.rmse),
            ece_mean: pick(|r| r.ece_mean),
            ece_sum: pick(|r| r.ece_sum),
            per_fold: reports
                .iter()
                .enumerate()
                .map(|(fold, r)| FoldSummary {
                    fold,
                    n_test: r.n_test,
                    rmse: r.rmse,
                    ece_mean: r.ece_mean,
                    ece_sum: r.ece_sum,
                })
                .collect(),
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, text.as_bytes())
        .map_err(|e| CliError::runtime(&path.display().to_string(), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::runtime("serialize", e))? + "\n";
    write_text(path, &text)
}
