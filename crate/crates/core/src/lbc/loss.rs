//! The two alternating objectives.
//!
//! * Width objective: `|alpha - mean_i s_i| + mean_i(l1 |y_hat+d-y| + l2 |y-(y_hat-d)|)`
//!   where `s_i` is a product-of-sigmoids relaxation of the coverage
//!   indicator. Differentiated with respect to the widths `d`.
//! * Mean objective: width-weighted two-sided hinge
//!   `sum_i w_i [max(0, y_hat-d-y+tau) + max(0, y-y_hat-d+tau)]`,
//!   `w_i = d_i / sum_j d_j`. Differentiated with respect to `y_hat`.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::nn::sigmoid;

/// Guard for the hinge weight normalizer.
pub const WEIGHT_EPSILON: f64 = 1e-12;

/// Scalar loss with its gradient with respect to one input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Array1<f64>,
}

/// Smooth coverage indicator `sigmoid(k(y - (y_hat - delta))) * sigmoid(k((y_hat + delta) - y))`.
pub fn smooth_coverage(y: f64, y_hat: f64, delta: f64, sharpness: f64) -> f64 {
    sigmoid(sharpness * (y - y_hat + delta)) * sigmoid(sharpness * (y_hat + delta - y))
}

/// d/d(delta) of [`smooth_coverage`].
pub fn smooth_coverage_grad(y: f64, y_hat: f64, delta: f64, sharpness: f64) -> f64 {
    let a = sigmoid(sharpness * (y - y_hat + delta));
    let b = sigmoid(sharpness * (y_hat + delta - y));
    sharpness * (a * (1.0 - a) * b + a * b * (1.0 - b))
}

fn check_inputs(
    y: &ArrayView1<f64>,
    y_hat: &ArrayView1<f64>,
    delta: &ArrayView1<f64>,
) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Empty("loss input".into()));
    }
    if y.len() != y_hat.len() || y.len() != delta.len() {
        return Err(Error::DimensionMismatch(format!(
            "loss input lengths {}, {}, {}",
            y.len(),
            y_hat.len(),
            delta.len()
        )));
    }
    if y.iter()
        .chain(y_hat.iter())
        .chain(delta.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("loss input".into()));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Hyperparameters of the width objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthLossParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub sharpness: f64,
}

/// Width objective for a single level `alpha`; gradient is with respect to `delta`.
pub fn width_loss(
    y: ArrayView1<f64>,
    y_hat: ArrayView1<f64>,
    delta: ArrayView1<f64>,
    alpha: f64,
    params: WidthLossParams,
) -> Result<LossGrad> {
    check_inputs(&y, &y_hat, &delta)?;
    let n = y.len() as f64;
    let k = params.sharpness;
    let mut coverage = 0.0;
    let mut reg = 0.0;
    for i in 0..y.len() {
        coverage += smooth_coverage(y[i], y_hat[i], delta[i], k);
        reg += params.lambda1 * (y_hat[i] + delta[i] - y[i]).abs()
            + params.lambda2 * (y[i] - (y_hat[i] - delta[i])).abs();
    }
    coverage /= n;
    let gap = alpha - coverage;
    let value = gap.abs() + reg / n;

    let gap_sign = sign(gap);
    let grad = Array1::from_shape_fn(y.len(), |i| {
        let d_cov = -gap_sign * smooth_coverage_grad(y[i], y_hat[i], delta[i], k);
        let d_reg = params.lambda1 * sign(y_hat[i] + delta[i] - y[i])
            + params.lambda2 * sign(y[i] - (y_hat[i] - delta[i]));
        (d_cov + d_reg) / n
    });
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("width loss".into()));
    }
    Ok(LossGrad { value, grad })
}

/// Width-weighted hinge objective; gradient is with respect to `y_hat`.
pub fn hinge_loss(
    y: ArrayView1<f64>,
    y_hat: ArrayView1<f64>,
    delta: ArrayView1<f64>,
    tau: f64,
) -> Result<LossGrad> {
    check_inputs(&y, &y_hat, &delta)?;
    let total: f64 = delta.sum().max(WEIGHT_EPSILON);
    let mut value = 0.0;
    let mut grad = Array1::zeros(y.len());
    for i in 0..y.len() {
        let w = delta[i] / total;
        let below = y_hat[i] - delta[i] - y[i] + tau;
        let above = y[i] - (y_hat[i] + delta[i]) + tau;
        if below > 0.0 {
            value += w * below;
            grad[i] += w;
        }
        if above > 0.0 {
            value += w * above;
            grad[i] -= w;
        }
    }
    if !value.is_finite() || grad.iter().any(|g: &f64| !g.is_finite()) {
        return Err(Error::NonFinite("hinge loss".into()));
    }
    Ok(LossGrad { value, grad })
}

/// Gaussian negative log-likelihood `mean_i [(y-mu)^2 / (2 e^s) + s/2]`
/// with `s = max(log_var, floor)`. Gradients are `(d/d mu, d/d log_var)`.
pub fn gaussian_nll(
    y: ArrayView1<f64>,
    mu: ArrayView1<f64>,
    log_var: ArrayView1<f64>,
    floor: f64,
) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    check_inputs(&y, &mu, &log_var)?;
    let n = y.len() as f64;
    let mut value = 0.0;
    let mut g_mu = Array1::zeros(y.len());
    let mut g_s = Array1::zeros(y.len());
    for i in 0..y.len() {
        let clamped = log_var[i] < floor;
        let s = if clamped { floor } else { log_var[i] };
        let r = y[i] - mu[i];
        let inv_var = (-s).exp();
        value += 0.5 * r * r * inv_var + 0.5 * s;
        g_mu[i] = -r * inv_var / n;
        g_s[i] = if clamped {
            0.0
        } else {
            (0.5 - 0.5 * r * r * inv_var) / n
        };
    }
    value /= n;
    if !value.is_finite() {
        return Err(Error::NonFinite("gaussian nll".into()));
    }
    Ok((value, g_mu, g_s))
}

/// `mean_i (y_hat - y)^2`, gradient with respect to `y_hat`.
pub fn mse_loss(y: ArrayView1<f64>, y_hat: ArrayView1<f64>) -> Result<LossGrad> {
    check_inputs(&y, &y_hat, &y_hat)?;
    let n = y.len() as f64;
    let resid = &y_hat - &y;
    let value = resid.mapv(|r| r * r).sum() / n;
    if !value.is_finite() {
        return Err(Error::NonFinite("mse loss".into()));
    }
    Ok(LossGrad {
        value,
        grad: resid.mapv(|r| 2.0 * r / n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    const P: WidthLossParams = WidthLossParams {
        lambda1: 0.1,
        lambda2: 0.1,
        sharpness: 50.0,
    };

    #[test]
    fn smooth_coverage_examples() {
        assert!((smooth_coverage(0.3, 0.3, 1.0, 50.0) - 1.0).abs() < 1e-9);
        let at_edge = smooth_coverage(1.0, 0.0, 1.0, 7.0);
        assert!((at_edge - sigmoid(14.0) * 0.5).abs() < 1e-15);
        assert_eq!(smooth_coverage(2.0, 2.0, 0.0, 50.0), 0.25);
    }

    #[test]
    fn width_loss_large_interval() {
        let delta = 40.0;
        let l = width_loss(
            array![1.0].view(),
            array![1.0].view(),
            array![delta].view(),
            0.9,
            P,
        )
        .unwrap();
        let expected = 0.1 + 0.2 * delta;
        assert!((l.value - expected).abs() < 1e-12, "{}", l.value);
    }

    #[test]
    fn width_loss_regularizer_only_at_matching_alpha() {
        let (y, m, d) = (array![0.0, 1.0], array![0.1, 0.4], array![0.3, 0.2]);
        let c = (0..2)
            .map(|i| smooth_coverage(y[i], m[i], d[i], 50.0))
            .sum::<f64>()
            / 2.0;
        let reg = (0..2)
            .map(|i| 0.1 * (m[i] + d[i] - y[i]).abs() + 0.1 * (y[i] - m[i] + d[i]).abs())
            .sum::<f64>()
            / 2.0;
        let l = width_loss(y.view(), m.view(), d.view(), c, P).unwrap();
        assert!((l.value - reg).abs() < 1e-15);
        let off = WidthLossParams {
            lambda1: 0.0,
            lambda2: 0.0,
            sharpness: 50.0,
        };
        let l = width_loss(y.view(), m.view(), d.view(), 0.7, off).unwrap();
        assert!((l.value - (0.7 - c).abs()).abs() < 1e-15);
    }

    #[test]
    fn hinge_examples() {
        let l = hinge_loss(
            array![0.0].view(),
            array![0.0].view(),
            array![1.0].view(),
            0.05,
        )
        .unwrap();
        assert_eq!(l.value, 0.0);
        let l = hinge_loss(
            array![1.5].view(),
            array![0.0].view(),
            array![1.0].view(),
            0.05,
        )
        .unwrap();
        assert!((l.value - 0.55).abs() < 1e-15, "{}", l.value);
        // Both samples miss their tau-shrunk interval by 1.0.
        let tau = 0.05;
        let y = array![1.0 + 1.0 - tau + 1.0, -(3.0 - tau + 1.0)];
        let l = hinge_loss(
            y.view(),
            array![1.0, 0.0].view(),
            array![1.0, 3.0].view(),
            tau,
        )
        .unwrap();
        assert!((l.value - 1.0).abs() < 1e-12, "{}", l.value);
        assert!((l.grad[0] + 0.25).abs() < 1e-15);
        assert!((l.grad[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn loss_input_errors() {
        assert!(hinge_loss(
            array![1.0].view(),
            array![1.0, 2.0].view(),
            array![1.0].view(),
            0.0
        )
        .is_err());
        let e = ndarray::Array1::<f64>::zeros(0);
        assert!(width_loss(e.view(), e.view(), e.view(), 0.5, P).is_err());
        assert!(hinge_loss(
            array![f64::NAN].view(),
            array![0.0].view(),
            array![1.0].view(),
            0.0
        )
        .is_err());
    }

    #[test]
    fn mse_and_nll_values() {
        let l = mse_loss(array![0.0, 0.0].view(), array![3.0, 4.0].view()).unwrap();
        assert_eq!(l.value, 12.5);
        assert_eq!(l.grad, array![3.0, 4.0]);
        let (v, gm, gs) = gaussian_nll(
            array![1.0].view(),
            array![0.0].view(),
            array![0.0].view(),
            -10.0,
        )
        .unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(gm, array![-1.0]);
        assert_eq!(gs, array![0.0]);
        let (_, _, gs) = gaussian_nll(
            array![1.0].view(),
            array![0.0].view(),
            array![-20.0].view(),
            -10.0,
        )
        .unwrap();
        assert_eq!(gs, array![0.0]);
    }

    proptest! {
        #[test]
        fn hinge_zero_inside_shrunk_interval(
            samples in proptest::collection::vec((-5.0f64..5.0, 0.1f64..3.0, 0.0f64..1.0), 1..30),
            tau in 0.0f64..0.1,
        ) {
            let m = Array1::from_iter(samples.iter().map(|s| s.0));
            let d = Array1::from_iter(samples.iter().map(|s| s.1 + tau));
            // Place y strictly inside [m - d + tau, m + d - tau].
            let y = Array1::from_iter(samples.iter().map(|s| s.0 + (2.0 * s.2 - 1.0) * s.1 * 0.999));
            let l = hinge_loss(y.view(), m.view(), d.view(), tau).unwrap();
            prop_assert_eq!(l.value, 0.0);
            prop_assert!(l.grad.iter().all(|&g| g == 0.0));
        }

        #[test]
        fn hinge_positive_on_violation(
            m in -5.0f64..5.0, d in 0.1f64..3.0, excess in 1e-6f64..2.0, tau in 0.0f64..0.1, below in any::<bool>(),
        ) {
            let y = if below { m - d + tau - excess } else { m + d - tau + excess };
            let l = hinge_loss(array![y].view(), array![m].view(), array![d].view(), tau).unwrap();
            prop_assert!(l.value > 0.0);
        }

        #[test]
        fn smooth_coverage_symmetric_and_monotone(
            r in 0.0f64..3.0, extra in 0.0f64..3.0, d in 0.0f64..2.0, k in 0.5f64..60.0, m in -2.0f64..2.0,
        ) {
            let a = smooth_coverage(m + r, m, d, k);
            let b = smooth_coverage(m - r, m, d, k);
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!(smooth_coverage(m + r + extra, m, d, k) <= a + 1e-15);
            // Saturates to exactly 1.0 in floating point deep inside the interval.
            prop_assert!(a > 0.0 && a <= 1.0);
        }

        #[test]
        fn coverage_term_falls_as_widths_grow_when_undercovered(
            samples in proptest::collection::vec((-2.0f64..2.0, 0.0f64..1.0), 1..20),
        ) {
            let y = Array1::from_iter(samples.iter().map(|s| s.0));
            let m = Array1::zeros(y.len());
            let d = Array1::from_iter(samples.iter().map(|s| s.1));
            let c = (0..y.len()).map(|i| smooth_coverage(y[i], 0.0, d[i], 50.0)).sum::<f64>() / y.len() as f64;
            prop_assume!(c < 0.99);
            let alpha = (c + 0.01).min(0.999);
            let off = WidthLossParams { lambda1: 0.0, lambda2: 0.0, sharpness: 50.0 };
            let l = width_loss(y.view(), m.view(), d.view(), alpha, off).unwrap();
            prop_assert!(l.grad.iter().all(|&g| g <= 0.0));
        }
    }
}
