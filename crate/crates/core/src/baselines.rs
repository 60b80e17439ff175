//! Comparison trainers: squared error, heteroscedastic Gaussian (HNN) and
//! MC dropout. All share the network substrate and optimizer of the
//! calibration-driven trainer; intervals come from Gaussian quantiles.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::interval::{CalibrationLevels, IntervalPrediction};
use crate::lbc::{gaussian_nll, mse_loss, BatchPolicy};
use crate::nn::{self, Adam, Head, Mlp};
use crate::rng::{derive_seed, stream, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub iterations: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub batch: BatchPolicy,
    pub seed: u64,
    pub dropout_rate: f64,
    pub mc_passes: usize,
    /// Lower clamp on the predicted log-variance (standardized units).
    pub log_var_floor: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            lr: 1e-3,
            hidden: nn::DEFAULT_HIDDEN.to_vec(),
            batch: BatchPolicy::default(),
            seed: 0,
            dropout_rate: 0.1,
            mc_passes: 50,
            log_var_floor: -10.0,
        }
    }
}

impl BaselineConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errors.push(format!("baseline lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            errors.push(format!("dropout rate {} not in [0, 1)", self.dropout_rate));
        }
        if self.mc_passes < 2 {
            errors.push("mc_passes must be at least 2".into());
        }
        if !self.log_var_floor.is_finite() {
            errors.push("log_var_floor must be finite".into());
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
}

/// Per-sample Gaussian predictive distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

/// Standard-normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Half-width multiplier for a central interval of probability `alpha`.
pub fn interval_multiplier(alpha: f64) -> f64 {
    normal_quantile(0.5 * (1.0 + alpha))
}

impl GaussianPrediction {
    /// Central intervals `mean +- z_{(1+alpha)/2} * std` for every level.
    pub fn intervals(&self, levels: &CalibrationLevels) -> Result<IntervalPrediction> {
        let z: Vec<f64> = levels.iter().map(interval_multiplier).collect();
        let widths =
            Array2::from_shape_fn((self.mean.len(), levels.len()), |(i, j)| z[j] * self.std[i]);
        IntervalPrediction::new(self.mean.clone(), widths)
    }
}

fn init(data: &Dataset, cfg: &BaselineConfig, outputs: usize) -> Result<(Mlp, Adam)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let dims = nn::layer_dims(data.num_features(), &cfg.hidden, outputs);
    let model = Mlp::new(
        &dims,
        Head::Identity,
        derive_seed(cfg.seed, stream::MEAN_INIT, 0),
    )?;
    let opt = Adam::new(&model, cfg.lr)?;
    Ok((model, opt))
}

fn batch(data: &Dataset, idx: &Option<Vec<usize>>) -> (Array2<f64>, Array1<f64>) {
    match idx {
        None => (data.features.clone(), data.targets.clone()),
        Some(i) => (
            data.features.select(Axis(0), i),
            data.targets.select(Axis(0), i),
        ),
    }
}

fn diverged(iteration: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(what) => Error::Diverged {
            iteration,
            reason: format!("non-finite {what}"),
        },
        other => other,
    }
}

/// Squared-error regression network (optionally with dropout on hidden layers).
fn train_squared_error(data: &Dataset, cfg: &BaselineConfig, dropout: f64) -> Result<Mlp> {
    let (mut model, mut opt) = init(data, cfg, 1)?;
    let mut batch_rng = stream_rng(cfg.seed, stream::BATCH, 0);
    let mut drop_rng = stream_rng(cfg.seed, stream::DROPOUT, 0);
    for it in 0..cfg.iterations {
        let idx = cfg.batch.draw(data.len(), &mut batch_rng);
        let (x, y) = batch(data, &idx);
        let tape = if dropout > 0.0 {
            model.forward_dropout(x.view(), dropout, &mut drop_rng)?
        } else {
            model.forward_tape(x.view())?
        };
        let loss = mse_loss(y.view(), tape.output().column(0)).map_err(diverged(it))?;
        let up = loss.grad.insert_axis(Axis(1));
        let g = model.backward_from_tape(&tape, up.view())?;
        opt.step(&mut model, &g).map_err(diverged(it))?;
    }
    Ok(model)
}

pub fn train_mse(data: &Dataset, cfg: &BaselineConfig) -> Result<Mlp> {
    train_squared_error(data, cfg, 0.0)
}

/// Network with a `(mean, log-variance)` head trained by Gaussian NLL.
pub fn train_hnn(data: &Dataset, cfg: &BaselineConfig) -> Result<Mlp> {
    let (mut model, mut opt) = init(data, cfg, 2)?;
    let mut batch_rng = stream_rng(cfg.seed, stream::BATCH, 0);
    for it in 0..cfg.iterations {
        let idx = cfg.batch.draw(data.len(), &mut batch_rng);
        let (x, y) = batch(data, &idx);
        let tape = model.forward_tape(x.view())?;
        let out = tape.output();
        let (_, g_mu, g_s) =
            gaussian_nll(y.view(), out.column(0), out.column(1), cfg.log_var_floor)
                .map_err(diverged(it))?;
        let mut up = Array2::zeros(out.raw_dim());
        up.column_mut(0).assign(&g_mu);
        up.column_mut(1).assign(&g_s);
        let g = model.backward_from_tape(&tape, up.view())?;
        opt.step(&mut model, &g).map_err(diverged(it))?;
    }
    Ok(model)
}

pub fn predict_hnn(
    model: &Mlp,
    x: ArrayView2<f64>,
    log_var_floor: f64,
) -> Result<GaussianPrediction> {
    if model.output_dim() != 2 {
        return Err(Error::DimensionMismatch(
            "HNN model needs a 2-dim head".into(),
        ));
    }
    let out = model.forward(x)?;
    Ok(GaussianPrediction {
        mean: out.column(0).to_owned(),
        std: out.column(1).mapv(|s| (0.5 * s.max(log_var_floor)).exp()),
    })
}

/// Point predictions of a single-output network.
pub fn predict_point(model: &Mlp, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    Ok(model.forward(x)?.column(0).to_owned())
}

/// Homoscedastic Gaussian around a point model, scaled by its training RMSE.
pub fn predict_mse(
    model: &Mlp,
    x: ArrayView2<f64>,
    residual_std: f64,
) -> Result<GaussianPrediction> {
    let mean = predict_point(model, x)?;
    let std = Array1::from_elem(mean.len(), residual_std);
    Ok(GaussianPrediction { mean, std })
}

pub fn train_mc_dropout(data: &Dataset, cfg: &BaselineConfig) -> Result<Mlp> {
    train_squared_error(data, cfg, cfg.dropout_rate)
}

/// Mean and sample standard deviation over `passes` stochastic forward
/// passes. Masks for pass `k` come from the stream `(seed, k)`.
pub fn predict_mc_dropout(
    model: &Mlp,
    x: ArrayView2<f64>,
    dropout: f64,
    passes: usize,
    seed: u64,
) -> Result<GaussianPrediction> {
    if passes < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 MC passes, got {passes}"
        )));
    }
    let outputs = (0..passes)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, stream::MC_PASS, k as u64);
            model
                .forward_dropout(x, dropout, &mut rng)
                .map(|t| t.into_output().column(0).to_owned())
        })
        .collect::<Result<Vec<_>>>()?;

    // Welford: identical passes give exactly zero spread.
    let n = x.nrows();
    let mut mean = Array1::<f64>::zeros(n);
    let mut m2 = Array1::<f64>::zeros(n);
    for (k, out) in outputs.iter().enumerate() {
        for i in 0..n {
            let delta = out[i] - mean[i];
            mean[i] += delta / (k + 1) as f64;
            m2[i] += delta * (out[i] - mean[i]);
        }
    }
    let std = m2.mapv(|v| (v / (passes - 1) as f64).sqrt());
    Ok(GaussianPrediction { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn erf_series(x: f64) -> f64 {
        // Maclaurin series; converges quickly for |x| < 3.
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    fn quantile_by_bisection(p: f64) -> f64 {
        let cdf = |z: f64| 0.5 * (1.0 + erf_series(z / std::f64::consts::SQRT_2));
        let (mut lo, mut hi) = (-6.0, 6.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quantiles_match_series_oracle() {
        for alpha in [0.1, 0.3, 0.5, 0.7, 0.9, 0.95] {
            let z = interval_multiplier(alpha);
            let oracle = quantile_by_bisection(0.5 * (1.0 + alpha));
            assert!((z - oracle).abs() < 1e-9, "alpha {alpha}: {z} vs {oracle}");
        }
        assert!((interval_multiplier(0.9) - 1.6449).abs() < 5e-5);
    }

    #[test]
    fn gaussian_intervals_strictly_increasing() {
        let g = GaussianPrediction {
            mean: array![0.0, 1.0],
            std: array![0.5, 2.0],
        };
        let p = g.intervals(&CalibrationLevels::default()).unwrap();
        for row in p.widths.rows() {
            assert!(row.iter().zip(row.iter().skip(1)).all(|(a, b)| a < b));
        }
    }

    fn linear(n: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / (n - 1) as f64 * 2.0 - 1.0);
        let y = x.column(0).mapv(|v| 2.0 * v);
        Dataset::from_arrays(x, y).unwrap()
    }

    fn small() -> BaselineConfig {
        BaselineConfig {
            iterations: 50,
            hidden: vec![8, 8],
            seed: 4,
            ..BaselineConfig::default()
        }
    }

    #[test]
    fn constant_target_fits_zero() {
        let x = Array2::from_shape_fn((20, 1), |(i, _)| i as f64 / 10.0 - 1.0);
        let data = Dataset::from_arrays(x, Array1::zeros(20)).unwrap();
        let model = train_mse(
            &data,
            &BaselineConfig {
                iterations: 300,
                ..small()
            },
        )
        .unwrap();
        let pred = predict_point(&model, data.features.view()).unwrap();
        let rmse = crate::metrics::rmse(data.targets.view(), pred.view()).unwrap();
        assert!(rmse < 1e-2, "{rmse}");
    }

    #[test]
    fn trainers_are_deterministic() {
        let data = linear(30);
        let cfg = small();
        assert_eq!(
            train_mse(&data, &cfg).unwrap(),
            train_mse(&data, &cfg).unwrap()
        );
        assert_eq!(
            train_hnn(&data, &cfg).unwrap(),
            train_hnn(&data, &cfg).unwrap()
        );
        assert_eq!(
            train_mc_dropout(&data, &cfg).unwrap(),
            train_mc_dropout(&data, &cfg).unwrap()
        );
    }

    #[test]
    fn mc_dropout_zero_rate_has_zero_spread() {
        let model = Mlp::new(&[1, 8, 8, 1], Head::Identity, 1).unwrap();
        let x = array![[0.1], [0.7], [-0.3]];
        let g = predict_mc_dropout(&model, x.view(), 0.0, 10, 3).unwrap();
        assert!(g.std.iter().all(|&s| s == 0.0));
        assert_eq!(g.mean, model.forward(x.view()).unwrap().column(0));
    }

    #[test]
    fn mc_dropout_seeded_and_validated() {
        let model = Mlp::new(&[1, 16, 16, 1], Head::Identity, 1).unwrap();
        let x = array![[0.1], [0.7]];
        let a = predict_mc_dropout(&model, x.view(), 0.1, 20, 3).unwrap();
        let b = predict_mc_dropout(&model, x.view(), 0.1, 20, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.std.iter().all(|&s| s > 0.0));
        assert!(predict_mc_dropout(&model, x.view(), 0.1, 1, 3).is_err());
    }

    #[test]
    fn hnn_head_checked() {
        let model = Mlp::new(&[1, 4, 1], Head::Identity, 1).unwrap();
        assert!(predict_hnn(&model, array![[0.0]].view(), -10.0).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = BaselineConfig {
            lr: -1.0,
            dropout_rate: 1.0,
            mc_passes: 1,
            ..BaselineConfig::default()
        };
        assert_eq!(cfg.problems().len(), 3);
    }
}
