//! Bias-corrected adaptive-moment optimizer.

use ndarray::Zip;

use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Gradients,
    second_moment: Gradients,
}

impl Adam {
    pub fn new(model: &Mlp, lr: f64) -> Result<Self> {
        Self::with_decays(model, lr, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON)
    }

    pub fn with_decays(model: &Mlp, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {lr} must be positive"
            )));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} = {b} not in (0, 1)")));
            }
        }
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first_moment: Gradients::zeros_like(model),
            second_moment: Gradients::zeros_like(model),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. On error neither the model nor the
    /// optimizer state is modified.
    ///
    /// An all-zero gradient advances the step counter and decays the
    /// moments but leaves the parameters untouched.
    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) -> Result<()> {
        model.check_gradients(grads)?;
        if self.first_moment.weights.len() != grads.weights.len() {
            return Err(Error::DimensionMismatch(
                "optimizer state for a different model".into(),
            ));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }

        let (b1, b2) = (self.beta1, self.beta2);
        let step = self.step + 1;
        let mut m = self.first_moment.clone();
        let mut v = self.second_moment.clone();
        for (m, g) in m.weights.iter_mut().zip(&grads.weights) {
            Zip::from(m)
                .and(g)
                .for_each(|m, &g| *m = b1 * *m + (1.0 - b1) * g);
        }
        for (m, g) in m.biases.iter_mut().zip(&grads.biases) {
            Zip::from(m)
                .and(g)
                .for_each(|m, &g| *m = b1 * *m + (1.0 - b1) * g);
        }
        for (v, g) in v.weights.iter_mut().zip(&grads.weights) {
            Zip::from(v)
                .and(g)
                .for_each(|v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
        }
        for (v, g) in v.biases.iter_mut().zip(&grads.biases) {
            Zip::from(v)
                .and(g)
                .for_each(|v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
        }

        if !grads.is_zero() {
            let c1 = 1.0 - b1.powi(step as i32);
            let c2 = 1.0 - b2.powi(step as i32);
            let (lr, eps) = (self.lr, self.epsilon);
            let update = |p: &mut f64, m: &f64, v: &f64| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            };
            let mut next = model.clone();
            {
                let (weights, biases) = next.parameters_mut();
                for ((p, m), v) in weights.iter_mut().zip(&m.weights).zip(&v.weights) {
                    Zip::from(p).and(m).and(v).for_each(update);
                }
                for ((p, m), v) in biases.iter_mut().zip(&m.biases).zip(&v.biases) {
                    Zip::from(p).and(m).and(v).for_each(update);
                }
            }
            if !next.is_finite() {
                return Err(Error::NonFinite("parameters after update".into()));
            }
            *model = next;
        }

        self.first_moment = m;
        self.second_moment = v;
        self.step = step;
        Ok(())
    }
}
