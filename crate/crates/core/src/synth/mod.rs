//! Synthetic labeled I/Q datasets: modulators, channel, container format.

pub mod channel;
pub mod container;
pub mod dataset;
mod frame;
pub mod modulation;

pub use channel::{add_awgn, apply_cfo, apply_fading, apply_sro, measure_snr, Pdp, PdpTap};
pub use container::{read_dataset, write_dataset, MANIFEST_NAME};
pub use dataset::{
    synth_cell, synth_dataset, synth_frame, ChannelConfig, DatasetBundle, DatasetConfig,
    Impairments,
};
pub use frame::{IQFrame, FRAME_LEN};
pub use modulation::{modulate, Modulation};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("unknown modulation class `{0}`")]
    Catalog(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("generated a non-finite sample")]
    NonFinite,
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
