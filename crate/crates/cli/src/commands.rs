use std::path::{Path, PathBuf};

use calreg_core::interval::IntervalPrediction;
use calreg_core::metrics::{calibration_curve, curve_to_csv, ece_from_curve, CalibrationReport};
use calreg_core::pdp::{partial_dependence_bands, subsample_background, DEFAULT_GRID_SIZE};
use calreg_core::plot::{calibration_svg, pdp_svg};
use clap::Args;
use ndarray::{concatenate, Axis};
use rayon::prelude::*;

use crate::config::{out_root, Method, RunArgs, RunConfig};
use crate::error::{CliError, CliResult};
use crate::protocol::*;

/// Trains every fold in parallel and writes the run directory.
pub fn run_training(prep: &Prepared, out: &Path) -> CliResult<Summary> {
    std::fs::create_dir_all(out).map_err(|e| CliError::runtime(&out.display().to_string(), e))?;
    write_text(&out.join(CONFIG_FILE), &prep.config.to_json())?;
    write_json(&out.join(LOAD_REPORT_FILE), &prep.load_report)?;
    let reports = (0..prep.num_folds())
        .into_par_iter()
        .map(|k| train_fold(prep, out, k))
        .collect::<CliResult<Vec<CalibrationReport>>>()?;
    let summary = Summary::new(prep.config.method, prep.data.len(), &reports);
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn describe(summary: &Summary) -> String {
    format!(
        "{}: rmse {:.4} ± {:.4}, ece_mean {:.4} ± {:.4}, ece_sum {:.4} ± {:.4} over {} fold(s)",
        summary.method,
        summary.rmse.mean,
        summary.rmse.std,
        summary.ece_mean.mean,
        summary.ece_mean.std,
        summary.ece_sum.mean,
        summary.ece_sum.std,
        summary.folds
    )
}

pub fn train(args: &RunArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    let out = args.out_dir(cfg.method);
    let prep = Prepared::new(cfg)?;
    let summary = run_training(&prep, &out)?;
    println!("{}", describe(&summary));
    println!("wrote {}", out.display());
    Ok(())
}

/// Configuration of an existing run; only the dataset path may be overridden.
fn existing_run(args: &RunArgs) -> CliResult<(Prepared, PathBuf)> {
    let method = match &args.config {
        Some(path) => RunConfig::load(path)?.method,
        None => RunConfig::default().method,
    };
    let out = args.out_dir(args.method.unwrap_or(method));
    let path = out.join(CONFIG_FILE);
    if !path.exists() {
        return Err(CliError::config(format!(
            "{} is not a run directory (no {CONFIG_FILE}); run `train` first",
            out.display()
        )));
    }
    let mut cfg = RunConfig::load(&path)?;
    if let Some(data) = &args.data {
        cfg.data = Some(data.clone());
    }
    Ok((Prepared::new(cfg)?, out))
}

fn reload_all(prep: &Prepared, out: &Path) -> CliResult<Vec<FoldPrediction>> {
    (0..prep.num_folds())
        .into_par_iter()
        .map(|k| reload_fold(prep, out, k).map(|(_, _, p)| p))
        .collect()
}

pub fn evaluate(args: &RunArgs) -> CliResult<()> {
    let (prep, out) = existing_run(args)?;
    let reports = reload_all(&prep, &out)?
        .iter()
        .map(|p| p.report(&prep.config))
        .collect::<calreg_core::Result<Vec<_>>>()
        .map_err(|e| CliError::runtime("evaluate", e))?;
    let summary = Summary::new(prep.config.method, prep.data.len(), &reports);
    write_json(&out.join("evaluation.json"), &summary)?;
    println!("{}", describe(&summary));
    Ok(())
}

/// Coverage curve over the pooled test predictions of every fold.
pub fn calibration(args: &RunArgs) -> CliResult<()> {
    let (prep, out) = existing_run(args)?;
    let folds = reload_all(&prep, &out)?;
    let err = |e: calreg_core::Error| CliError::runtime("calibration curve", e);
    let shape = |e: ndarray::ShapeError| CliError::runtime("calibration curve", e);
    let targets = concatenate(
        Axis(0),
        &folds.iter().map(|f| f.targets.view()).collect::<Vec<_>>(),
    )
    .map_err(shape)?;
    let mean = concatenate(
        Axis(0),
        &folds
            .iter()
            .map(|f| f.prediction.mean.view())
            .collect::<Vec<_>>(),
    )
    .map_err(shape)?;
    let widths = concatenate(
        Axis(0),
        &folds
            .iter()
            .map(|f| f.prediction.widths.view())
            .collect::<Vec<_>>(),
    )
    .map_err(shape)?;
    let pooled = IntervalPrediction::new(mean, widths).map_err(err)?;
    let curve = calibration_curve(targets.view(), &pooled, &prep.config.levels).map_err(err)?;
    let (ece_mean, _) = ece_from_curve(&curve).map_err(err)?;
    write_text(&out.join("calibration_curve.csv"), &curve_to_csv(&curve))?;
    let title = format!(
        "Calibration: {} (pooled over {} fold(s))",
        prep.config.method,
        folds.len()
    );
    write_text(
        &out.join("calibration_curve.svg"),
        &calibration_svg(&curve, &title),
    )?;
    println!(
        "pooled ece_mean {ece_mean:.4} over {} test predictions",
        targets.len()
    );
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct PdpArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Feature (column name) to sweep.
    #[arg(long)]
    pub feature: String,
    /// Fold whose model and training rows are used.
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    pub grid_size: usize,
    /// Subsample the background to at most this many rows.
    #[arg(long)]
    pub max_background: Option<usize>,
}

pub fn pdp(args: &PdpArgs) -> CliResult<()> {
    let (prep, out) = existing_run(&args.run)?;
    if args.fold >= prep.num_folds() {
        return Err(CliError::config(format!(
            "fold {} out of range ({} folds)",
            args.fold,
            prep.num_folds()
        )));
    }
    let j = prep.data.feature_index(&args.feature).ok_or_else(|| {
        CliError::config(format!(
            "unknown feature '{}'; available: {}",
            args.feature,
            prep.data.feature_names.join(", ")
        ))
    })?;
    let (fold, fitted, _) = reload_fold(&prep, &out, args.fold)?;
    let seed = prep.fold_seed(args.fold);
    let background = match args.max_background {
        Some(m) => subsample_background(&fold.train, m, seed),
        None => fold.train.clone(),
    };
    let cfg = &prep.config;
    let result = partial_dependence_bands(
        |x| fitted.predict(cfg, x, seed),
        &background,
        j,
        &cfg.levels,
        args.grid_size,
    )
    .map_err(|e| match e {
        calreg_core::Error::InvalidConfig(m) => CliError::config(m),
        other => CliError::runtime("pdp", other),
    })?
    .unstandardize(&fold.stats, j);
    let stem = format!("pdp_{}", sanitize(&args.feature));
    write_text(&out.join(format!("{stem}.csv")), &result.to_csv())?;
    write_text(
        &out.join(format!("{stem}.svg")),
        &pdp_svg(&result, &prep.data.target_name),
    )?;
    println!("wrote {}", out.join(format!("{stem}.csv")).display());
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Methods to compare.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Lbc, Method::Mse, Method::Hnn, Method::McDropout])]
    pub methods: Vec<Method>,
    /// Load existing `<out>/<method>/summary.json` files instead of retraining.
    #[arg(long)]
    pub reuse: bool,
}

pub fn compare(args: &CompareArgs) -> CliResult<()> {
    let cfg = args.run.resolve()?;
    let root = args
        .run
        .out
        .clone()
        .unwrap_or_else(|| out_root().join("compare"));
    let prep = Prepared::new(cfg)?;
    let results: Vec<(Method, CliResult<Summary>)> = args
        .methods
        .par_iter()
        .map(|&method| {
            let dir = root.join(method.name());
            let cached = dir.join(SUMMARY_FILE);
            let result = if args.reuse && cached.exists() {
                load_summary(&cached)
            } else {
                let mut config = prep.config.clone();
                config.method = method;
                let sub = Prepared {
                    config,
                    data: prep.data.clone(),
                    load_report: prep.load_report.clone(),
                    plan: prep.plan.clone(),
                };
                run_training(&sub, &dir)
            };
            (method, result)
        })
        .collect();

    std::fs::create_dir_all(&root)
        .map_err(|e| CliError::runtime(&root.display().to_string(), e))?;
    write_text(&root.join("table.csv"), &table_csv(&results))?;
    write_text(&root.join("table.md"), &table_md(&results))?;
    print!("{}", table_md(&results));
    let failed: Vec<String> = results
        .iter()
        .filter_map(|(m, r)| r.as_ref().err().map(|e| format!("{m}: {e}")))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "{} method(s) failed: {}",
            failed.len(),
            failed.join("; ")
        )))
    }
}

fn load_summary(path: &Path) -> CliResult<Summary> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::runtime(&path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::runtime(&path.display().to_string(), e))
}

fn one_line(e: &CliError) -> String {
    e.to_string().replace(['\n', ','], " ").replace('|', "/")
}

pub fn table_csv(results: &[(Method, CliResult<Summary>)]) -> String {
    let mut out = String::from(
        "method,rmse_mean,rmse_std,ece_mean_mean,ece_mean_std,ece_sum_mean,ece_sum_std,status\n",
    );
    for (m, r) in results {
        match r {
            Ok(s) => out.push_str(&format!(
                "{m},{},{},{},{},{},{},ok\n",
                s.rmse.mean,
                s.rmse.std,
                s.ece_mean.mean,
                s.ece_mean.std,
                s.ece_sum.mean,
                s.ece_sum.std
            )),
            Err(e) => out.push_str(&format!("{m},,,,,,,error: {}\n", one_line(e))),
        }
    }
    out
}

pub fn table_md(results: &[(Method, CliResult<Summary>)]) -> String {
    let mut out = String::from("| Method | RMSE | ECE (mean) | ECE (sum) |\n|---|---|---|---|\n");
    for (m, r) in results {
        match r {
            Ok(s) => out.push_str(&format!(
                "| {m} | {:.3} ± {:.3} | {:.3} ± {:.3} | {:.3} ± {:.3} |\n",
                s.rmse.mean,
                s.rmse.std,
                s.ece_mean.mean,
                s.ece_mean.std,
                s.ece_sum.mean,
                s.ece_sum.std
            )),
            Err(e) => {
                let msg = format!("error: {}", one_line(e));
                out.push_str(&format!("| {m} | {msg} | {msg} | {msg} |\n"));
            }
        }
    }
    out
}
