//! Fully connected ReLU network with hand-written reverse-mode gradients.
//!
//! Layout: weights are stored `[in_dim, out_dim]` so a batch `X [n, in]`
//! maps to `X . W + b`. Hidden layers use ReLU; the last layer goes through
//! a configurable [`Head`].

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Output activation applied to the final affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Identity,
    Softplus,
    /// `out_j = sum_{k <= j} softplus(z_k)`: strictly positive and
    /// non-decreasing across output columns.
    CumulativeSoftplus,
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Head {
    fn apply(self, mut z: Array2<f64>) -> Array2<f64> {
        match self {
            Head::Identity => z,
            Head::Softplus => {
                z.mapv_inplace(softplus);
                z
            }
            Head::CumulativeSoftplus => {
                for mut row in z.rows_mut() {
                    let mut acc = 0.0;
                    for v in row.iter_mut() {
                        acc += softplus(*v);
                        *v = acc;
                    }
                }
                z
            }
        }
    }

    /// Maps dL/d(output) to dL/d(pre-activation).
    fn backward(self, pre: &Array2<f64>, upstream: &Array2<f64>) -> Array2<f64> {
        match self {
            Head::Identity => upstream.clone(),
            Head::Softplus => {
                let mut g = upstream.clone();
                Zip::from(&mut g)
                    .and(pre)
                    .for_each(|g, &z| *g *= sigmoid(z));
                g
            }
            Head::CumulativeSoftplus => {
                let mut g = Array2::zeros(pre.raw_dim());
                for ((mut g_row, z_row), up_row) in g
                    .rows_mut()
                    .into_iter()
                    .zip(pre.rows())
                    .zip(upstream.rows())
                {
                    // Suffix sums of the upstream gradient.
                    let mut acc = 0.0;
                    for j in (0..z_row.len()).rev() {
                        acc += up_row[j];
                        g_row[j] = acc * sigmoid(z_row[j]);
                    }
                }
                g
            }
        }
    }
}

/// Per-layer parameter tensors, shaped like the owning [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            weights: model
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: model
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|&v| v == 0.0))
            && self.biases.iter().all(|b| b.iter().all(|&v| v == 0.0))
    }

    /// Flattened in layer order: weights (row-major) then biases, per layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    fn congruent_with(&self, model: &Mlp) -> bool {
        self.weights.len() == model.weights.len()
            && self
                .weights
                .iter()
                .zip(&model.weights)
                .all(|(g, w)| g.dim() == w.dim())
            && self
                .biases
                .iter()
                .zip(&model.biases)
                .all(|(g, b)| g.dim() == b.dim())
    }
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward_from_tape`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer (`inputs[0]` is the batch itself).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    /// Inverted-dropout masks applied after each hidden ReLU.
    masks: Vec<Option<Array2<f64>>>,
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }

    /// Pre-activation of each layer, in order.
    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    head: Head,
    seed: u64,
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidConfig(
            "an MLP needs at least input and output dims".into(),
        ));
    }
    if layer_dims.contains(&0) {
        return Err(Error::InvalidConfig("layer dims must be positive".into()));
    }
    Ok(())
}

impl Mlp {
    /// Random initialization: weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn new(layer_dims: &[usize], head: Head, seed: u64) -> Result<Self> {
        check_dims(layer_dims)?;
        let mut rng = <StreamRng as rand::SeedableRng>::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
                rng.random_range(-bound..bound)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            head,
            seed,
        })
    }

    pub fn zeros(layer_dims: &[usize], head: Head) -> Result<Self> {
        check_dims(layer_dims)?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights: layer_dims
                .windows(2)
                .map(|p| Array2::zeros((p[0], p[1])))
                .collect(),
            biases: layer_dims.windows(2).map(|p| Array1::zeros(p[1])).collect(),
            head,
            seed: 0,
        })
    }

    /// Builds a model from explicit parameters; `weights[l]` is `[in, out]`.
    pub fn from_parameters(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        head: Head,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weight matrices vs {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut layer_dims = vec![weights[0].nrows()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.nrows() != *layer_dims.last().unwrap() || b.len() != w.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l}: weight {:?}, bias {}, expected input {}",
                    w.dim(),
                    b.len(),
                    layer_dims.last().unwrap()
                )));
            }
            layer_dims.push(w.ncols());
        }
        check_dims(&layer_dims)?;
        let model = Self {
            layer_dims,
            weights,
            biases,
            head,
            seed: 0,
        };
        if !model.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(model)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn num_parameters(&self) -> usize {
        self.layer_dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Same order as [`Gradients::flatten`].
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_flat_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        let mut pos = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
            for v in b.iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
        }
        Ok(())
    }

    pub(crate) fn parameters_mut(&mut self) -> (&mut [Array2<f64>], &mut [Array1<f64>]) {
        (&mut self.weights, &mut self.biases)
    }

    pub(crate) fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "batch has {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input batch".into()));
        }
        Ok(())
    }

    /// Deterministic forward pass.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.weights.len() - 1;
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(w);
            z += b;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
                a = z;
            } else {
                return Ok(self.head.apply(z));
            }
        }
        unreachable!("model has at least one layer")
    }

    /// Forward pass recording everything [`Mlp::backward_from_tape`] needs.
    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Result<Tape> {
        self.run_tape(x, None)
    }

    /// Forward pass with inverted dropout (rate `p`) on every hidden activation.
    pub fn forward_dropout(&self, x: ArrayView2<f64>, p: f64, rng: &mut StreamRng) -> Result<Tape> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {p} not in [0, 1)"
            )));
        }
        self.run_tape(x, Some((p, rng)))
    }

    fn run_tape(
        &self,
        x: ArrayView2<f64>,
        mut dropout: Option<(f64, &mut StreamRng)>,
    ) -> Result<Tape> {
        self.check_input(&x)?;
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut masks = Vec::with_capacity(last);
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(w);
            z += b;
            inputs.push(a);
            if l < last {
                let mut h = z.mapv(|v| v.max(0.0));
                let mask = match dropout.as_mut() {
                    Some((p, rng)) if *p > 0.0 => {
                        let keep = 1.0 - *p;
                        let m = Array2::from_shape_fn(h.raw_dim(), |_| {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        h *= &m;
                        Some(m)
                    }
                    _ => None,
                };
                masks.push(mask);
                pre.push(z);
                a = h;
            } else {
                let output = self.head.apply(z.clone());
                pre.push(z);
                return Ok(Tape {
                    inputs,
                    pre,
                    masks,
                    output,
                });
            }
        }
        unreachable!("model has at least one layer")
    }

    /// Gradient of `sum(upstream * forward(x))` with respect to every parameter.
    pub fn backward(&self, x: ArrayView2<f64>, upstream: ArrayView2<f64>) -> Result<Gradients> {
        let tape = self.forward_tape(x)?;
        self.backward_from_tape(&tape, upstream)
    }

    pub fn backward_from_tape(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<Gradients> {
        if upstream.dim() != tape.output.dim() {
            return Err(Error::DimensionMismatch(format!(
                "upstream gradient {:?} vs forward output {:?}",
                upstream.dim(),
                tape.output.dim()
            )));
        }
        if tape.inputs.len() != self.weights.len() {
            return Err(Error::DimensionMismatch(
                "tape from a different model".into(),
            ));
        }
        let n_layers = self.weights.len();
        let mut grads = Gradients {
            weights: Vec::with_capacity(n_layers),
            biases: Vec::with_capacity(n_layers),
        };
        let mut g_z = self
            .head
            .backward(&tape.pre[n_layers - 1], &upstream.to_owned());
        for l in (0..n_layers).rev() {
            grads.weights.push(tape.inputs[l].t().dot(&g_z));
            grads.biases.push(g_z.sum_axis(Axis(0)));
            if l > 0 {
                let mut g_a = g_z.dot(&self.weights[l].t());
                if let Some(mask) = &tape.masks[l - 1] {
                    g_a *= mask;
                }
                Zip::from(&mut g_a).and(&tape.pre[l - 1]).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                g_z = g_a;
            }
        }
        grads.weights.reverse();
        grads.biases.reverse();
        debug_assert!(grads.congruent_with(self));
        Ok(grads)
    }

    pub(crate) fn check_gradients(&self, grads: &Gradients) -> Result<()> {
        if !grads.congruent_with(self) {
            return Err(Error::DimensionMismatch(
                "gradients not shaped like model".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_model_outputs_zero() {
        let m = Mlp::zeros(&[3, 4, 2], Head::Identity).unwrap();
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]];
        assert_eq!(m.forward(x.view()).unwrap(), Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn single_affine_layer() {
        let m =
            Mlp::from_parameters(vec![array![[2.0]]], vec![array![1.0]], Head::Identity).unwrap();
        assert_eq!(m.forward(array![[3.0]].view()).unwrap(), array![[7.0]]);
    }

    #[test]
    fn hidden_relu_clamps_negative() {
        let m = Mlp::from_parameters(
            vec![array![[-1.0]], array![[1.0]]],
            vec![array![0.0], array![0.0]],
            Head::Identity,
        )
        .unwrap();
        assert_eq!(m.forward(array![[3.0]].view()).unwrap(), array![[0.0]]);
    }

    #[test]
    fn affine_layer_gradients_by_hand() {
        let m =
            Mlp::from_parameters(vec![array![[2.0]]], vec![array![1.0]], Head::Identity).unwrap();
        let g = m
            .backward(array![[3.0]].view(), array![[1.0]].view())
            .unwrap();
        assert_eq!(g.weights[0], array![[3.0]]);
        assert_eq!(g.biases[0], array![1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = Mlp::new(&[3, 5, 5, 2], Head::Softplus, 11).unwrap();
        let x = array![[0.1, 0.2, 0.3], [-1.0, 0.4, 2.0]];
        let g = m.backward(x.view(), Array2::zeros((2, 2)).view()).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn cumulative_softplus_at_zero() {
        let m = Mlp::zeros(&[2, 3, 5], Head::CumulativeSoftplus).unwrap();
        let out = m.forward(array![[1.0, 2.0]].view()).unwrap();
        let ln2 = std::f64::consts::LN_2;
        for (j, v) in out.row(0).iter().enumerate() {
            assert_abs_diff_eq!(*v, (j + 1) as f64 * ln2, epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = Mlp::new(&[2, 3, 1], Head::Identity, 0).unwrap();
        assert!(matches!(
            m.forward(array![[1.0, 2.0, 3.0]].view()),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            m.forward(array![[1.0, f64::NAN]].view()),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            m.backward(array![[1.0, 2.0]].view(), array![[1.0, 1.0]].view()),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(Mlp::new(&[2], Head::Identity, 0).is_err());
        assert!(Mlp::new(&[2, 0, 1], Head::Identity, 0).is_err());
    }

    #[test]
    fn forward_is_bit_identical() {
        let m = Mlp::new(&[4, 16, 16, 3], Head::CumulativeSoftplus, 5).unwrap();
        let x = Array2::from_shape_fn((7, 4), |(i, j)| (i as f64 - 3.0) * 0.37 + j as f64);
        let a = m.forward(x.view()).unwrap();
        let b = m.forward(x.view()).unwrap();
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(a, m.forward_tape(x.view()).unwrap().into_output());
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let m = Mlp::new(&[16, 8, 1], Head::Identity, 3).unwrap();
        let bound = 0.25;
        assert!(m.weights()[0].iter().all(|w| w.abs() < bound));
        assert!(m.biases().iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert_eq!(m.num_parameters(), 16 * 8 + 8 + 8 + 1);
    }

    #[test]
    fn dropout_zero_rate_matches_plain_forward() {
        let m = Mlp::new(&[3, 8, 1], Head::Identity, 2).unwrap();
        let x = array![[0.3, -0.2, 1.0]];
        let mut rng = crate::rng::stream_rng(0, 0, 0);
        let t = m.forward_dropout(x.view(), 0.0, &mut rng).unwrap();
        assert_eq!(t.output(), &m.forward(x.view()).unwrap());
    }
}
