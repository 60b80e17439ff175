//! Calibration-driven training: the width objective, the weighted hinge
//! objective, and the alternating trainer that couples them.

mod loss;
mod trainer;

pub use crate::interval::{CalibrationLevels, IntervalPrediction, DEFAULT_LEVELS};
pub use loss::{
    gaussian_nll, hinge_loss, mse_loss, smooth_coverage, smooth_coverage_grad, width_loss,
    LossGrad, WidthLossParams, WEIGHT_EPSILON,
};
pub use trainer::{
    evaluate_standardized, history_to_csv, predict_widths, train_lbc, BatchPolicy, HistoryRecord,
    LbcConfig, LbcModel, LbcTrainer,
};
