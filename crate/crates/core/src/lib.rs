//! Modulation-recognition workbench.
//!
//! * [`engine`]: tensors, reverse-mode tape, softmax/cross-entropy, Adam.
//! * [`nn`]: layer vocabulary, architecture builders, model state, checkpoints.
//! * [`synth`]: modulators, channel impairments and the labeled I/Q dataset.
//! * [`train`]: splitting, training, metrics and hyperparameter sweeps.
//! * [`introspect`]: filter spectra and activation maximization.

pub mod dsp;
pub mod engine;
pub mod introspect;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod train;

pub use engine::{Tape, Tensor, Var};
