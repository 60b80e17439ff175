//! Calibration-driven deep regression.
//!
//! A mean network and a multi-level width network are trained by alternating
//! a calibration objective with a width-weighted hinge objective. The crate
//! also carries the comparison baselines (squared error, heteroscedastic
//! Gaussian, MC dropout), evaluation metrics, partial dependence with
//! interval bands, and SVG rendering.

pub mod baselines;
pub mod dataio;
pub mod error;
pub mod fsutil;
pub mod interval;
pub mod lbc;
pub mod metrics;
pub mod nn;
pub mod pdp;
pub mod plot;
pub mod rng;

pub use error::{Error, Result};
