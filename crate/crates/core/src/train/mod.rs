//! Training, evaluation metrics, sweeps and CSV reports.

mod config;
mod fit;
pub mod metrics;
pub mod report;
mod split;
pub mod sweep;

use thiserror::Error;

pub use config::{TrainConfig, DEFAULT_BATCH, DEFAULT_EPOCHS, DEFAULT_PATIENCE, DEFAULT_SPLITS};
pub use fit::{evaluate_loss, train, train_on, train_step, TrainHistory};
pub use metrics::{ci95_half_width, evaluate, metrics_from_predictions, MetricsReport, SnrAccuracy};
pub use split::{split_dataset, split_indices, Splits};
pub use sweep::{
    compare_architectures, run_sweep, sweep_depth, sweep_filters, sweep_taps, SweepKind, SweepOptions,
    SweepOutcome, SweepRow,
};

use crate::engine::EngineError;
use crate::nn::{ArchError, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("non-finite value at epoch {epoch}, batch {batch}, in {layer}")]
    NonFinite { epoch: usize, batch: usize, layer: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
