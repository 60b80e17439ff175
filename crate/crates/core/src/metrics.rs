//! Hard-indicator coverage, calibration error and RMSE.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{CalibrationLevels, IntervalPrediction};

/// Fraction of samples with `y_hat - delta <= y <= y_hat + delta` (inclusive).
pub fn empirical_coverage(
    y: ArrayView1<f64>,
    y_hat: ArrayView1<f64>,
    delta: ArrayView1<f64>,
) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Empty("coverage input".into()));
    }
    if y.len() != y_hat.len() || y.len() != delta.len() {
        return Err(Error::DimensionMismatch(format!(
            "coverage lengths {}, {}, {}",
            y.len(),
            y_hat.len(),
            delta.len()
        )));
    }
    let covered = ndarray::Zip::from(&y)
        .and(&y_hat)
        .and(&delta)
        .fold(0usize, |acc, &y, &m, &d| {
            acc + usize::from(m - d <= y && y <= m + d)
        });
    Ok(covered as f64 / y.len() as f64)
}

pub fn rmse(y_true: ArrayView1<f64>, y_pred: ArrayView1<f64>) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::Empty("rmse input".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch(format!(
            "rmse lengths {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let sse: f64 = y_true
        .iter()
        .zip(y_pred.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((sse / y_true.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCoverage {
    pub alpha: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub levels: Vec<LevelCoverage>,
    /// Mean of `|alpha - coverage|` over the levels. Headline number.
    pub ece_mean: f64,
    /// `levels.len() * ece_mean`.
    pub ece_sum: f64,
    /// In original target units when produced by [`calibration_report`] on
    /// unstandardized predictions.
    pub rmse: f64,
    pub n_test: usize,
}

/// `(alpha, coverage)` for every level.
pub fn calibration_curve(
    y: ArrayView1<f64>,
    pred: &IntervalPrediction,
    levels: &CalibrationLevels,
) -> Result<Vec<LevelCoverage>> {
    if pred.num_levels() != levels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} width columns for {} levels",
            pred.num_levels(),
            levels.len()
        )));
    }
    levels
        .iter()
        .enumerate()
        .map(|(j, alpha)| {
            Ok(LevelCoverage {
                alpha,
                coverage: empirical_coverage(y, pred.mean.view(), pred.widths_for(j))?,
            })
        })
        .collect()
}

/// Neumaier summation; exact-valued inputs like `0.9 + 0.7 + ... + 0.1`
/// come out correctly rounded.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Per-level `(ece_mean, ece_sum)`; the sum is defined as `len * mean` so the
/// two aggregations agree exactly.
pub fn ece_from_curve(curve: &[LevelCoverage]) -> Result<(f64, f64)> {
    if curve.is_empty() {
        return Err(Error::Empty("calibration curve".into()));
    }
    let total = compensated_sum(curve.iter().map(|p| (p.alpha - p.coverage).abs()));
    let mean = total / curve.len() as f64;
    Ok((mean, curve.len() as f64 * mean))
}

pub fn calibration_report(
    y: ArrayView1<f64>,
    pred: &IntervalPrediction,
    levels: &CalibrationLevels,
) -> Result<CalibrationReport> {
    let curve = calibration_curve(y, pred, levels)?;
    let (ece_mean, ece_sum) = ece_from_curve(&curve)?;
    Ok(CalibrationReport {
        levels: curve,
        ece_mean,
        ece_sum,
        rmse: rmse(y, pred.mean.view())?,
        n_test: y.len(),
    })
}

/// CSV with header `alpha,coverage,ideal`.
pub fn curve_to_csv(curve: &[LevelCoverage]) -> String {
    let mut out = String::from("alpha,coverage,ideal\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.alpha, p.coverage, p.alpha));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array2};
    use proptest::prelude::*;

    #[test]
    fn coverage_examples() {
        let c = empirical_coverage(
            array![0.5, 2.0].view(),
            array![0.0, 0.0].view(),
            array![1.0, 1.0].view(),
        )
        .unwrap();
        assert_eq!(c, 0.5);
        let y = array![1.0, -2.0, 3.5];
        assert_eq!(
            empirical_coverage(y.view(), y.view(), Array1::zeros(3).view()).unwrap(),
            1.0
        );
        assert_eq!(
            empirical_coverage(
                array![10.0, -10.0].view(),
                array![0.0, 0.0].view(),
                array![1.0, 1.0].view()
            )
            .unwrap(),
            0.0
        );
        assert!(empirical_coverage(
            Array1::zeros(0).view(),
            Array1::zeros(0).view(),
            Array1::zeros(0).view()
        )
        .is_err());
    }

    #[test]
    fn rmse_examples() {
        let y = array![1.0, 2.0];
        assert_eq!(rmse(y.view(), y.view()).unwrap(), 0.0);
        let r = rmse(array![0.0, 0.0].view(), array![3.0, 4.0].view()).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse(array![2.0].view(), array![-1.5].view()).unwrap(), 3.5);
        assert!(rmse(Array1::zeros(0).view(), Array1::zeros(0).view()).is_err());
    }

    fn report_for(coverages: &[f64]) -> (f64, f64) {
        let curve: Vec<_> = CalibrationLevels::default()
            .iter()
            .zip(coverages)
            .map(|(alpha, &coverage)| LevelCoverage { alpha, coverage })
            .collect();
        ece_from_curve(&curve).unwrap()
    }

    #[test]
    fn ece_examples() {
        assert_eq!(report_for(&[0.1, 0.3, 0.5, 0.7, 0.9]), (0.0, 0.0));
        assert_eq!(report_for(&[1.0; 5]), (0.5, 2.5));
    }

    #[test]
    fn full_coverage_report() {
        let n = 10;
        let y = Array1::from_iter((0..n).map(|i| i as f64));
        let pred = IntervalPrediction::new(y.clone(), Array2::from_elem((n, 5), 0.5)).unwrap();
        let r = calibration_report(y.view(), &pred, &CalibrationLevels::default()).unwrap();
        assert_eq!(r.ece_mean, 0.5);
        assert_eq!(r.ece_sum, 2.5);
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.n_test, n);
        assert!(curve_to_csv(&r.levels).starts_with("alpha,coverage,ideal\n0.1,1,0.1\n"));
    }

    proptest! {
        #[test]
        fn coverage_monotone_in_width(
            data in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.0f64..3.0, 0.0f64..2.0), 1..40)
        ) {
            let y = Array1::from_iter(data.iter().map(|t| t.0));
            let m = Array1::from_iter(data.iter().map(|t| t.1));
            let d = Array1::from_iter(data.iter().map(|t| t.2));
            let wider = Array1::from_iter(data.iter().map(|t| t.2 + t.3));
            prop_assert!(
                empirical_coverage(y.view(), m.view(), d.view()).unwrap()
                    <= empirical_coverage(y.view(), m.view(), wider.view()).unwrap()
            );
        }

        #[test]
        fn rmse_permutation_invariant(
            data in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40),
            rot in 0usize..40,
        ) {
            let a = Array1::from_iter(data.iter().map(|t| t.0));
            let b = Array1::from_iter(data.iter().map(|t| t.1));
            let k = rot % data.len();
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.rotate_left(k);
            idx.reverse();
            let pa = Array1::from_iter(idx.iter().map(|&i| a[i]));
            let pb = Array1::from_iter(idx.iter().map(|&i| b[i]));
            let r1 = rmse(a.view(), b.view()).unwrap();
            let r2 = rmse(pa.view(), pb.view()).unwrap();
            prop_assert!((r1 - r2).abs() <= 1e-12 * r1.max(1.0));
            prop_assert_eq!(rmse(a.view(), a.view()).unwrap(), 0.0);
            prop_assert_eq!(r1 == 0.0, a == b);
        }

        #[test]
        fn ece_sum_is_levels_times_mean(cov in proptest::collection::vec(0.0f64..=1.0, 5)) {
            let (mean, sum) = report_for(&cov);
            prop_assert_eq!(sum, 5.0 * mean);
        }
    }
}
