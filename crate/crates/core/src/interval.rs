//! Calibration levels and multi-level interval predictions.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataio::Standardization;
use crate::error::{Error, Result};

pub const DEFAULT_LEVELS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Strictly increasing confidence levels in the open interval (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CalibrationLevels(Vec<f64>);

impl CalibrationLevels {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidConfig("no calibration levels".into()));
        }
        if let Some(a) = levels.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::InvalidConfig(format!("level {a} not in (0, 1)")));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "levels must be strictly increasing".into(),
            ));
        }
        Ok(Self(levels))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied()
    }

    /// Position of `alpha`, compared exactly.
    pub fn index_of(&self, alpha: f64) -> Option<usize> {
        self.0.iter().position(|&a| a == alpha)
    }
}

impl Default for CalibrationLevels {
    fn default() -> Self {
        Self(DEFAULT_LEVELS.to_vec())
    }
}

impl TryFrom<Vec<f64>> for CalibrationLevels {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CalibrationLevels> for Vec<f64> {
    fn from(l: CalibrationLevels) -> Self {
        l.0
    }
}

impl std::str::FromStr for CalibrationLevels {
    type Err = Error;

    /// Comma-separated list, e.g. `0.1,0.5,0.9`.
    fn from_str(s: &str) -> Result<Self> {
        let levels = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidConfig(format!("bad level '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels)
    }
}

/// Mean estimates plus one half-width per calibration level for each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalPrediction {
    pub mean: Array1<f64>,
    /// `[n, levels]`, non-negative and non-decreasing along each row.
    pub widths: Array2<f64>,
}

impl IntervalPrediction {
    pub fn new(mean: Array1<f64>, widths: Array2<f64>) -> Result<Self> {
        if mean.len() != widths.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} means vs {} width rows",
                mean.len(),
                widths.nrows()
            )));
        }
        if widths.iter().any(|&w| w.is_nan() || w < 0.0) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite(
                "interval prediction (or negative width)".into(),
            ));
        }
        Ok(Self { mean, widths })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn num_levels(&self) -> usize {
        self.widths.ncols()
    }

    pub fn widths_for(&self, level: usize) -> ArrayView1<'_, f64> {
        self.widths.column(level)
    }

    pub fn lower(&self, level: usize) -> Array1<f64> {
        &self.mean - &self.widths.column(level)
    }

    pub fn upper(&self, level: usize) -> Array1<f64> {
        &self.mean + &self.widths.column(level)
    }

    pub fn is_nested(&self) -> bool {
        self.widths
            .rows()
            .into_iter()
            .all(|r| r.iter().zip(r.iter().skip(1)).all(|(a, b)| a <= b))
    }

    /// Converts standardized-target predictions to original units.
    pub fn unstandardize(&self, stats: &Standardization) -> IntervalPrediction {
        IntervalPrediction {
            mean: self.mean.mapv(|m| stats.unstandardize_target(m)),
            widths: self.widths.mapv(|w| stats.unstandardize_width(w)),
        }
    }
}
