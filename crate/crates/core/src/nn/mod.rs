//! Minimal MLP substrate shared by every estimator in the crate.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::{Adam, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use mlp::{sigmoid, softplus, Gradients, Head, Mlp, Tape};

/// Five hidden layers of width 64.
pub const DEFAULT_HIDDEN: [usize; 5] = [64; 5];

/// `[input_dim, hidden..., output_dim]`.
pub fn layer_dims(input_dim: usize, hidden: &[usize], output_dim: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(hidden);
    dims.push(output_dim);
    dims
}
