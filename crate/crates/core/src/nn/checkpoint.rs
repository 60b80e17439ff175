//! JSON model checkpoints.
//!
//! Parameters are flattened in layer order (weights row-major `[in, out]`,
//! then biases). Floats are written in shortest round-trip form and parsed
//! with exact rounding, so save/load is value-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Head, Mlp};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Training method that produced the model (`lbc_mean`, `hnn`, ...).
    pub method: String,
    pub layer_dims: Vec<usize>,
    pub head: Head,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_rate: Option<f64>,
    pub parameters: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &Mlp, method: &str) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            method: method.to_owned(),
            layer_dims: model.layer_dims().to_vec(),
            head: model.head(),
            seed: model.seed(),
            dropout_rate: None,
            parameters: model.flat_parameters(),
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = Some(rate);
        self
    }

    pub fn to_model(&self) -> Result<Mlp> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        let mut model = Mlp::zeros(&self.layer_dims, self.head)?.with_seed(self.seed);
        model.set_flat_parameters(&self.parameters)?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
