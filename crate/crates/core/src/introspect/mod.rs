//! Filter spectra and activation maximization for trained models.

mod dream;
mod export;
mod view;

use thiserror::Error;

pub use dream::{activation_maximize, DreamOptions, DreamResult, DEFAULT_DREAM_STEPS, DEFAULT_STEP_SIZE, INITIAL_SIGMA};
pub use export::{export_views, ExportOptions, ViewEntry, ViewIndex, INDEX_NAME};
pub use view::{fft128, filter_count, filter_view, ifft128, FilterView};

use crate::engine::EngineError;
use crate::nn::ModelError;

#[derive(Debug, Error)]
pub enum IntrospectError {
    #[error("layer {layer}: {detail}")]
    Target { layer: usize, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("export: {0}")]
    Export(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
