//! Alternating optimization of the width estimator and the mean estimator.
//!
//! Each iteration draws one level uniformly from the calibration levels,
//! takes one optimizer step on the width objective with the mean network
//! frozen, then one step on the hinge objective with the width network frozen.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{hinge_loss, mse_loss, width_loss, WidthLossParams};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::interval::{CalibrationLevels, IntervalPrediction};
use crate::metrics::calibration_report;
use crate::nn::{self, Adam, Head, Mlp};
use crate::rng::{derive_seed, stream, stream_rng, StreamRng};

/// Full batch up to `full_batch_max` rows, otherwise uniform minibatches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPolicy {
    pub full_batch_max: usize,
    pub minibatch: usize,
}

impl Default for BatchPolicy {
    fn default() -> Self {
        Self {
            full_batch_max: 2048,
            minibatch: 512,
        }
    }
}

impl BatchPolicy {
    /// `None` means use every row.
    pub(crate) fn draw(&self, n: usize, rng: &mut StreamRng) -> Option<Vec<usize>> {
        if n <= self.full_batch_max {
            None
        } else {
            let mut idx = rand::seq::index::sample(rng, n, self.minibatch.min(n)).into_vec();
            idx.sort_unstable();
            Some(idx)
        }
    }

    pub(crate) fn validate(&self, errors: &mut Vec<String>) {
        if self.minibatch == 0 {
            errors.push("minibatch size must be positive".into());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbcConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub iterations: usize,
    /// Learning rate for the mean network.
    pub lr_theta: f64,
    /// Learning rate for the width network.
    pub lr_phi: f64,
    /// Sigmoid sharpness of the smooth coverage indicator.
    pub sharpness: f64,
    pub hidden: Vec<usize>,
    pub batch: BatchPolicy,
    pub seed: u64,
    /// Validation metrics are recorded every `eval_every` iterations (0 = never).
    pub eval_every: usize,
    /// Optional squared-error warm-up steps for the mean network before alternation.
    pub mse_warmup: usize,
}

impl Default for LbcConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.1,
            tau: 0.05,
            iterations: 1000,
            lr_theta: 5e-5,
            lr_phi: 1e-4,
            sharpness: 50.0,
            hidden: nn::DEFAULT_HIDDEN.to_vec(),
            batch: BatchPolicy::default(),
            seed: 0,
            eval_every: 100,
            mse_warmup: 0,
        }
    }
}

impl LbcConfig {
    /// Every problem with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut errors = Vec::new();
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("tau", self.tau),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errors.push(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        for (name, v) in [
            ("lr_theta", self.lr_theta),
            ("lr_phi", self.lr_phi),
            ("sharpness", self.sharpness),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errors.push(format!("{name} must be positive, got {v}"));
            }
        }
        if self.hidden.contains(&0) {
            errors.push("hidden layer widths must be positive".into());
        }
        self.batch.validate(&mut errors);
        errors
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn width_params(&self) -> WidthLossParams {
        WidthLossParams {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            sharpness: self.sharpness,
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub alpha: f64,
    pub loss_g: f64,
    pub loss_f: f64,
    pub val_rmse: Option<f64>,
    pub val_ece: Option<f64>,
}

pub fn history_to_csv(history: &[HistoryRecord]) -> String {
    let mut out = String::from("iteration,alpha,loss_g,loss_f,val_rmse,val_ece\n");
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for h in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            h.iteration,
            h.alpha,
            h.loss_g,
            h.loss_f,
            opt(h.val_rmse),
            opt(h.val_ece)
        ));
    }
    out
}

/// Trained mean and width networks.
#[derive(Debug, Clone, PartialEq)]
pub struct LbcModel {
    pub mean_model: Mlp,
    pub width_model: Mlp,
    pub levels: CalibrationLevels,
}

impl LbcModel {
    pub fn new(mean_model: Mlp, width_model: Mlp, levels: CalibrationLevels) -> Result<Self> {
        if mean_model.output_dim() != 1 {
            return Err(Error::DimensionMismatch(
                "mean model must have one output".into(),
            ));
        }
        if width_model.output_dim() != levels.len() {
            return Err(Error::DimensionMismatch(format!(
                "width model has {} outputs for {} levels",
                width_model.output_dim(),
                levels.len()
            )));
        }
        if mean_model.input_dim() != width_model.input_dim() {
            return Err(Error::DimensionMismatch(
                "mean and width models disagree on input dim".into(),
            ));
        }
        Ok(Self {
            mean_model,
            width_model,
            levels,
        })
    }

    /// Predictions in the units the models were trained in.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<IntervalPrediction> {
        let mean = self.mean_model.forward(x)?.column(0).to_owned();
        let widths = predict_widths(&self.width_model, x, &self.levels)?;
        IntervalPrediction::new(mean, widths)
    }
}

/// Width matrix `[n, levels]` from a width network.
pub fn predict_widths(
    width_model: &Mlp,
    x: ArrayView2<f64>,
    levels: &CalibrationLevels,
) -> Result<Array2<f64>> {
    if width_model.output_dim() != levels.len() {
        return Err(Error::DimensionMismatch(format!(
            "width model has {} outputs for {} levels",
            width_model.output_dim(),
            levels.len()
        )));
    }
    width_model.forward(x)
}

/// Owns both networks, their optimizers and the random streams.
pub struct LbcTrainer<'a> {
    config: LbcConfig,
    levels: CalibrationLevels,
    data: &'a Dataset,
    mean_model: Mlp,
    width_model: Mlp,
    mean_opt: Adam,
    width_opt: Adam,
    alpha_rng: StreamRng,
    batch_rng: StreamRng,
}

fn rows<'b>(x: &'b Array2<f64>, idx: &Option<Vec<usize>>) -> std::borrow::Cow<'b, Array2<f64>> {
    match idx {
        None => std::borrow::Cow::Borrowed(x),
        Some(i) => std::borrow::Cow::Owned(x.select(Axis(0), i)),
    }
}

fn targets(y: ArrayView1<'_, f64>, idx: &Option<Vec<usize>>) -> ndarray::Array1<f64> {
    match idx {
        None => y.to_owned(),
        Some(i) => y.select(Axis(0), i),
    }
}

fn one_hot_column(n: usize, cols: usize, col: usize, values: ArrayView1<f64>) -> Array2<f64> {
    let mut up = Array2::zeros((n, cols));
    up.column_mut(col).assign(&values);
    up
}

impl<'a> LbcTrainer<'a> {
    pub fn new(data: &'a Dataset, config: LbcConfig, levels: CalibrationLevels) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Empty("training set".into()));
        }
        let d = data.num_features();
        let mean_seed = derive_seed(config.seed, stream::MEAN_INIT, 0);
        let width_seed = derive_seed(config.seed, stream::WIDTH_INIT, 0);
        let mean_model = Mlp::new(
            &nn::layer_dims(d, &config.hidden, 1),
            Head::Identity,
            mean_seed,
        )?;
        let width_model = Mlp::new(
            &nn::layer_dims(d, &config.hidden, levels.len()),
            Head::CumulativeSoftplus,
            width_seed,
        )?;
        let mean_opt = Adam::new(&mean_model, config.lr_theta)?;
        let width_opt = Adam::new(&width_model, config.lr_phi)?;
        Ok(Self {
            alpha_rng: stream_rng(config.seed, stream::ALPHA, 0),
            batch_rng: stream_rng(config.seed, stream::BATCH, 0),
            config,
            levels,
            data,
            mean_model,
            width_model,
            mean_opt,
            width_opt,
        })
    }

    pub fn mean_model(&self) -> &Mlp {
        &self.mean_model
    }

    pub fn width_model(&self) -> &Mlp {
        &self.width_model
    }

    pub fn sample_alpha(&mut self) -> (usize, f64) {
        let j = self.alpha_rng.random_range(0..self.levels.len());
        (j, self.levels.as_slice()[j])
    }

    /// Squared-error steps on the mean network only.
    pub fn warm_up(&mut self, steps: usize) -> Result<()> {
        for it in 0..steps {
            let idx = self.config.batch.draw(self.data.len(), &mut self.batch_rng);
            let x = rows(&self.data.features, &idx);
            let y = targets(self.data.targets.view(), &idx);
            let tape = self.mean_model.forward_tape(x.view())?;
            let loss = mse_loss(y.view(), tape.output().column(0)).map_err(|e| diverged(it, e))?;
            let up = one_hot_column(y.len(), 1, 0, loss.grad.view());
            let g = self.mean_model.backward_from_tape(&tape, up.view())?;
            self.mean_opt
                .step(&mut self.mean_model, &g)
                .map_err(|e| diverged(it, e))?;
        }
        Ok(())
    }

    /// One width-network step at level index `level`; returns the loss before the step.
    pub fn width_step(&mut self, level: usize) -> Result<f64> {
        let alpha = self.levels.as_slice()[level];
        let idx = self.config.batch.draw(self.data.len(), &mut self.batch_rng);
        let x = rows(&self.data.features, &idx);
        let y = targets(self.data.targets.view(), &idx);
        let y_hat = self.mean_model.forward(x.view())?;
        let tape = self.width_model.forward_tape(x.view())?;
        let loss = width_loss(
            y.view(),
            y_hat.column(0),
            tape.output().column(level),
            alpha,
            self.config.width_params(),
        )?;
        let up = one_hot_column(y.len(), self.levels.len(), level, loss.grad.view());
        let g = self.width_model.backward_from_tape(&tape, up.view())?;
        self.width_opt.step(&mut self.width_model, &g)?;
        Ok(loss.value)
    }

    /// One mean-network step at level index `level`; returns the loss before the step.
    pub fn mean_step(&mut self, level: usize) -> Result<f64> {
        let idx = self.config.batch.draw(self.data.len(), &mut self.batch_rng);
        let x = rows(&self.data.features, &idx);
        let y = targets(self.data.targets.view(), &idx);
        let widths = self.width_model.forward(x.view())?;
        let tape = self.mean_model.forward_tape(x.view())?;
        let loss = hinge_loss(
            y.view(),
            tape.output().column(0),
            widths.column(level),
            self.config.tau,
        )?;
        let up = one_hot_column(y.len(), 1, 0, loss.grad.view());
        let g = self.mean_model.backward_from_tape(&tape, up.view())?;
        self.mean_opt.step(&mut self.mean_model, &g)?;
        Ok(loss.value)
    }

    /// One full alternation.
    pub fn iterate(&mut self, iteration: usize) -> Result<HistoryRecord> {
        let (level, alpha) = self.sample_alpha();
        let loss_g = self.width_step(level).map_err(|e| diverged(iteration, e))?;
        let loss_f = self.mean_step(level).map_err(|e| diverged(iteration, e))?;
        Ok(HistoryRecord {
            iteration,
            alpha,
            loss_g,
            loss_f,
            val_rmse: None,
            val_ece: None,
        })
    }

    pub fn snapshot(&self) -> Result<LbcModel> {
        LbcModel::new(
            self.mean_model.clone(),
            self.width_model.clone(),
            self.levels.clone(),
        )
    }

    pub fn into_model(self) -> Result<LbcModel> {
        LbcModel::new(self.mean_model, self.width_model, self.levels)
    }
}

fn diverged(iteration: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Diverged {
            iteration,
            reason: format!("non-finite {what}"),
        },
        other => other,
    }
}

/// Runs the full alternating schedule. `validation`, when given, must be
/// standardized with the same statistics as `train`; its metrics are then
/// reported in original target units.
pub fn train_lbc(
    train: &Dataset,
    config: &LbcConfig,
    levels: &CalibrationLevels,
    validation: Option<&Dataset>,
) -> Result<(LbcModel, Vec<HistoryRecord>)> {
    let mut trainer = LbcTrainer::new(train, config.clone(), levels.clone())?;
    trainer.warm_up(config.mse_warmup)?;
    let mut history = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let mut rec = trainer.iterate(it)?;
        let due = config.eval_every > 0
            && ((it + 1) % config.eval_every == 0 || it + 1 == config.iterations);
        if let (true, Some(val)) = (due, validation) {
            let model = trainer.snapshot()?;
            let (rmse, ece) = evaluate_standardized(&model, val)?;
            rec.val_rmse = Some(rmse);
            rec.val_ece = Some(ece);
        }
        history.push(rec);
    }
    Ok((trainer.into_model()?, history))
}

/// `(rmse, ece_mean)` of a model on a (possibly standardized) dataset,
/// reported in original units when statistics are attached.
pub fn evaluate_standardized(model: &LbcModel, data: &Dataset) -> Result<(f64, f64)> {
    let pred = model.predict(data.features.view())?;
    let (pred, y) = match &data.standardization {
        Some(stats) => (
            pred.unstandardize(stats),
            data.targets.mapv(|v| stats.unstandardize_target(v)),
        ),
        None => (pred, data.targets.clone()),
    };
    let report = calibration_report(y.view(), &pred, &model.levels)?;
    Ok((report.rmse, report.ece_mean))
}
