//! Layer vocabulary, architecture builders, model state and checkpoints.

pub mod arch;
pub mod checkpoint;
mod forward;
pub mod layers;
pub mod spec;
mod state;

pub use arch::{
    build_baseline_cnn, build_cldnn, build_conv_matched_filter, build_deep_cnn, build_inception,
    build_resnet, ArchError, ArchOptions, Architecture, Bypass, DEFAULT_DROPOUT, DEFAULT_FILTERS,
    DEFAULT_HIDDEN, DEFAULT_LSTM_UNITS, DEFAULT_TAPS,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use forward::{
    forward_model, frames_to_batch, predict_proba, record_forward, record_prefix, ForwardPass,
    ModelError,
};
pub use spec::{ActShape, LayerKind, LayerSpec, ModelSpec, Source, SpecError, DEFAULT_CLASSES, INPUT_CHANNELS};
pub use state::{Mode, ModelState};
