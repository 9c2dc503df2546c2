//! Neural approximation of the optimal period assignment.
//!
//! A small feedforward network (one sigmoid hidden layer, linear output)
//! learns the map from a problem instance (execution times plus available
//! utilization) to the optimal sampling periods. At run time the scheduler
//! then replaces a constrained optimization by one fixed-cost forward
//! pass. The submodules cover the network itself and its operation-count
//! model, training-set generation from the exact solver, Levenberg-
//! Marquardt training, and model persistence.

mod dataset;
mod mlp;
mod persist;
mod train;

pub use dataset::{gen_dataset, Dataset, Normalizer};
pub use mlp::{flop_count, sigmoid, MlpParams, OpCount, PeriodNet, SIGMOID_OP_COST};
pub use persist::{load_model, save_model};
pub use train::{lm_linearization, train_lm, EpochRecord, LmConfig, StopReason, TrainReport};

use thiserror::Error;

use crate::optimizer::OptimizerError;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("holdout fraction {0} must lie in [0, 1)")]
    BadHoldoutFraction(f64),
    #[error("network needs at least one hidden unit")]
    NoHiddenUnits,
    #[error("model file I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file is malformed: {0}")]
    Malformed(String),
}
