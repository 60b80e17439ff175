//! Partial dependence curves with expected interval bands.
//!
//! For a grid value `v` of feature `s`, every background row has its `s`
//! column replaced by `v`; the curve value is the average model output over
//! those rows. Bands average the per-row bounds `mean -+ width`, which equals
//! the curve value -+ the average width.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Standardization};
use crate::error::{Error, Result};
use crate::interval::{CalibrationLevels, IntervalPrediction};
use crate::lbc::predict_widths;
use crate::nn::Mlp;
use crate::rng::{stream, stream_rng};

pub const DEFAULT_GRID_SIZE: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpBand {
    pub alpha: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpResult {
    pub feature: String,
    pub grid: Vec<f64>,
    pub mean_curve: Vec<f64>,
    /// One band per level, in level order.
    pub bands: Vec<PdpBand>,
    pub n_background: usize,
}

/// `grid_size` evenly spaced points from the observed minimum to maximum.
pub fn feature_grid(data: &Dataset, feature: usize, grid_size: usize) -> Result<Vec<f64>> {
    check(data, feature)?;
    if grid_size < 2 {
        return Err(Error::InvalidConfig(format!(
            "grid size must be at least 2, got {grid_size}"
        )));
    }
    let col = data.features.column(feature);
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let last = (grid_size - 1) as f64;
    Ok((0..grid_size)
        .map(|i| {
            if i + 1 == grid_size {
                hi
            } else {
                lo + (hi - lo) * i as f64 / last
            }
        })
        .collect())
}

fn check(data: &Dataset, feature: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("background dataset".into()));
    }
    if feature >= data.num_features() {
        return Err(Error::InvalidConfig(format!(
            "feature index {feature} out of range for {} features",
            data.num_features()
        )));
    }
    Ok(())
}

fn with_feature(background: &Array2<f64>, feature: usize, value: f64) -> Array2<f64> {
    let mut x = background.clone();
    x.column_mut(feature).fill(value);
    x
}

fn column_means(out: &Array2<f64>) -> Array1<f64> {
    out.sum_axis(Axis(0)) / out.nrows() as f64
}

/// Average of the first model output over the background at each grid value.
pub fn partial_dependence(
    model: &Mlp,
    data: &Dataset,
    feature: usize,
    grid_size: usize,
) -> Result<Vec<f64>> {
    let grid = feature_grid(data, feature, grid_size)?;
    curve_on_grid(model, data, feature, &grid)
}

fn curve_on_grid(model: &Mlp, data: &Dataset, feature: usize, grid: &[f64]) -> Result<Vec<f64>> {
    grid.par_iter()
        .map(|&v| {
            let out = model.forward(with_feature(&data.features, feature, v).view())?;
            Ok(column_means(&out)[0])
        })
        .collect()
}

pub fn partial_dependence_with_intervals(
    mean_model: &Mlp,
    width_model: &Mlp,
    data: &Dataset,
    feature: usize,
    levels: &CalibrationLevels,
    grid_size: usize,
) -> Result<PdpResult> {
    partial_dependence_bands(
        |x| {
            let mean = mean_model.forward(x)?.column(0).to_owned();
            IntervalPrediction::new(mean, predict_widths(width_model, x, levels)?)
        },
        data,
        feature,
        levels,
        grid_size,
    )
}

/// Same averaging for any interval predictor, e.g. Gaussian baselines.
pub fn partial_dependence_bands<F>(
    predict: F,
    data: &Dataset,
    feature: usize,
    levels: &CalibrationLevels,
    grid_size: usize,
) -> Result<PdpResult>
where
    F: Fn(ArrayView2<f64>) -> Result<IntervalPrediction> + Sync,
{
    let grid = feature_grid(data, feature, grid_size)?;
    let rows = grid
        .par_iter()
        .map(|&v| {
            let x = with_feature(&data.features, feature, v);
            let pred = predict(x.view())?;
            if pred.num_levels() != levels.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} width columns for {} levels",
                    pred.num_levels(),
                    levels.len()
                )));
            }
            let n = pred.len() as f64;
            Ok((pred.mean.sum() / n, pred.widths.sum_axis(Axis(0)) / n))
        })
        .collect::<Result<Vec<_>>>()?;

    let bands = levels
        .iter()
        .enumerate()
        .map(|(j, alpha)| PdpBand {
            alpha,
            lower: rows.iter().map(|(m, w)| m - w[j]).collect(),
            upper: rows.iter().map(|(m, w)| m + w[j]).collect(),
        })
        .collect();
    Ok(PdpResult {
        feature: data.feature_names[feature].clone(),
        grid,
        mean_curve: rows.iter().map(|(m, _)| *m).collect(),
        bands,
        n_background: data.len(),
    })
}

/// At most `max_rows` background rows, drawn without replacement and kept in
/// their original order.
pub fn subsample_background(data: &Dataset, max_rows: usize, seed: u64) -> Dataset {
    if data.len() <= max_rows {
        return data.clone();
    }
    let mut rng = stream_rng(seed, stream::BACKGROUND, 0);
    let mut idx = sample(&mut rng, data.len(), max_rows).into_vec();
    idx.sort_unstable();
    data.select(&idx)
}

impl PdpResult {
    /// Pointwise `lower <= mean <= upper` and bands nested across levels.
    pub fn is_consistent(&self) -> bool {
        let n = self.grid.len();
        if self.mean_curve.len() != n
            || self
                .bands
                .iter()
                .any(|b| b.lower.len() != n || b.upper.len() != n)
        {
            return false;
        }
        let ordered = self.bands.iter().all(|b| {
            (0..n).all(|i| b.lower[i] <= self.mean_curve[i] && self.mean_curve[i] <= b.upper[i])
        });
        let nested = self.bands.windows(2).all(|w| {
            (0..n).all(|i| w[1].lower[i] <= w[0].lower[i] && w[0].upper[i] <= w[1].upper[i])
        });
        ordered && nested
    }

    /// Maps grid and curves from standardized to original units.
    pub fn unstandardize(&self, stats: &Standardization, feature: usize) -> PdpResult {
        let target = |v: &Vec<f64>| v.iter().map(|&y| stats.unstandardize_target(y)).collect();
        PdpResult {
            feature: self.feature.clone(),
            grid: self
                .grid
                .iter()
                .map(|&v| stats.unstandardize_feature(feature, v))
                .collect(),
            mean_curve: target(&self.mean_curve),
            bands: self
                .bands
                .iter()
                .map(|b| PdpBand {
                    alpha: b.alpha,
                    lower: target(&b.lower),
                    upper: target(&b.upper),
                })
                .collect(),
            n_background: self.n_background,
        }
    }

    /// Columns `grid,mean,lower_<alpha>...,upper_<alpha>...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("grid,mean");
        for b in &self.bands {
            out.push_str(&format!(",lower_{}", b.alpha));
        }
        for b in &self.bands {
            out.push_str(&format!(",upper_{}", b.alpha));
        }
        out.push('\n');
        for i in 0..self.grid.len() {
            out.push_str(&format!("{},{}", self.grid[i], self.mean_curve[i]));
            for b in &self.bands {
                out.push_str(&format!(",{}", b.lower[i]));
            }
            for b in &self.bands {
                out.push_str(&format!(",{}", b.upper[i]));
            }
            out.push('\n');
        }
        out
    }
}
