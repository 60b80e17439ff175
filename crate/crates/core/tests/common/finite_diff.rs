//! Central finite differences and random small networks for gradient checks.

use calreg_core::lbc::{gaussian_nll, hinge_loss, mse_loss, width_loss, WidthLossParams};
use calreg_core::nn::{Head, Mlp};
use calreg_core::rng::StreamRng;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Instances with any kink argument closer than this are redrawn.
const KINK_MARGIN: f64 = 1e-3;

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + STEP;
            let up = f(&probe);
            probe[i] = x[i] - STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, 1e-6)` over components.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub struct Instance {
    pub model: Mlp,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

fn random_instance(rng: &mut StreamRng, outputs: usize, head: Head) -> Instance {
    let inputs = rng.random_range(1..=4);
    let hidden: Vec<usize> = (0..rng.random_range(0..=2))
        .map(|_| rng.random_range(2..=8))
        .collect();
    let mut dims = vec![inputs];
    dims.extend(&hidden);
    dims.push(outputs);
    let model = Mlp::new(&dims, head, rng.random()).unwrap();
    let n = rng.random_range(3..=12);
    let x = Array2::from_shape_fn((n, inputs), |_| rng.random_range(-2.0..2.0));
    let y = Array1::from_shape_fn(n, |_| rng.random_range(-1.5..1.5));
    Instance { model, x, y }
}

fn near_relu_kink(inst: &Instance) -> bool {
    let tape = inst.model.forward_tape(inst.x.view()).unwrap();
    let pre = tape.pre_activations();
    pre[..pre.len() - 1]
        .iter()
        .any(|p| p.iter().any(|v| v.abs() < KINK_MARGIN))
}

fn loss_of_params(
    model: &Mlp,
    flat: &[f64],
    f: &dyn Fn(&Array2<f64>) -> f64,
    x: &Array2<f64>,
) -> f64 {
    let mut m = model.clone();
    m.set_flat_parameters(flat).unwrap();
    f(&m.forward(x.view()).unwrap())
}

/// Compares backprop of `loss` (given network output, returning value and
/// upstream gradient) against finite differences over all parameters.
/// Network output -> (loss value, upstream gradient).
type OutputLoss<'a> = dyn Fn(&Array2<f64>) -> (f64, Array2<f64>) + 'a;

fn check_network(inst: &Instance, loss: &OutputLoss) -> f64 {
    let out = inst.model.forward(inst.x.view()).unwrap();
    let (_, upstream) = loss(&out);
    let analytic = inst
        .model
        .backward(inst.x.view(), upstream.view())
        .unwrap()
        .flatten();
    let numeric = central_diff(
        |p| loss_of_params(&inst.model, p, &|o| loss(o).0, &inst.x),
        &inst.model.flat_parameters(),
    );
    max_relative_error(&analytic, &numeric)
}

fn column(upstream: Array1<f64>, j: usize, cols: usize) -> Array2<f64> {
    let mut g = Array2::zeros((upstream.len(), cols));
    g.column_mut(j).assign(&upstream);
    g
}

pub fn mse_case(rng: &mut StreamRng) -> f64 {
    loop {
        let inst = random_instance(rng, 1, Head::Identity);
        if near_relu_kink(&inst) {
            continue;
        }
        let y = inst.y.clone();
        return check_network(&inst, &|o| {
            let l = mse_loss(y.view(), o.column(0)).unwrap();
            (l.value, column(l.grad, 0, 1))
        });
    }
}

pub fn nll_case(rng: &mut StreamRng) -> f64 {
    loop {
        let inst = random_instance(rng, 2, Head::Identity);
        if near_relu_kink(&inst) {
            continue;
        }
        let y = inst.y.clone();
        return check_network(&inst, &|o| {
            let (v, g_mu, g_s) = gaussian_nll(y.view(), o.column(0), o.column(1), -10.0).unwrap();
            let mut up = column(g_mu, 0, 2);
            up.column_mut(1).assign(&g_s);
            (v, up)
        });
    }
}

/// Width objective through a cumulative-softplus width network; the mean
/// predictions are held fixed.
pub fn width_case(rng: &mut StreamRng) -> f64 {
    let params = WidthLossParams {
        lambda1: 0.1,
        lambda2: 0.1,
        sharpness: 50.0,
    };
    loop {
        let levels = rng.random_range(1..=5);
        let inst = random_instance(rng, levels, Head::CumulativeSoftplus);
        if near_relu_kink(&inst) {
            continue;
        }
        let j = rng.random_range(0..levels);
        let alpha = rng.random_range(0.05..0.95);
        let y_hat = Array1::from_shape_fn(inst.y.len(), |_| rng.random_range(-1.0..1.0));
        let delta = inst
            .model
            .forward(inst.x.view())
            .unwrap()
            .column(j)
            .to_owned();
        let cov = (0..inst.y.len())
            .map(|i| {
                calreg_core::lbc::smooth_coverage(inst.y[i], y_hat[i], delta[i], params.sharpness)
            })
            .sum::<f64>()
            / inst.y.len() as f64;
        let kink = (alpha - cov).abs() < KINK_MARGIN
            || (0..inst.y.len()).any(|i| {
                (y_hat[i] + delta[i] - inst.y[i]).abs() < KINK_MARGIN
                    || (inst.y[i] - y_hat[i] + delta[i]).abs() < KINK_MARGIN
            });
        if kink {
            continue;
        }
        let y = inst.y.clone();
        return check_network(&inst, &|o| {
            let l = width_loss(y.view(), y_hat.view(), o.column(j), alpha, params).unwrap();
            (l.value, column(l.grad, j, levels))
        });
    }
}

/// Width-weighted hinge through the mean network; widths held fixed.
pub fn hinge_case(rng: &mut StreamRng) -> f64 {
    let tau = 0.05;
    loop {
        let inst = random_instance(rng, 1, Head::Identity);
        if near_relu_kink(&inst) {
            continue;
        }
        let n = inst.y.len();
        let delta = Array1::from_shape_fn(n, |_| rng.random_range(0.05..1.0));
        let y_hat = inst
            .model
            .forward(inst.x.view())
            .unwrap()
            .column(0)
            .to_owned();
        let kink = (0..n).any(|i| {
            (y_hat[i] - delta[i] - inst.y[i] + tau).abs() < KINK_MARGIN
                || (inst.y[i] - y_hat[i] - delta[i] + tau).abs() < KINK_MARGIN
        });
        if kink {
            continue;
        }
        let y = inst.y.clone();
        return check_network(&inst, &|o| {
            let l = hinge_loss(y.view(), o.column(0), delta.view(), tau).unwrap();
            (l.value, column(l.grad, 0, 1))
        });
    }
}

/// One random gradient-check instance; returns its max relative error.
pub type Case = fn(&mut StreamRng) -> f64;

pub fn seeded(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
