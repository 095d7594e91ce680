//! Tensor arithmetic, reverse-mode differentiation, losses and Adam.

mod adam;
mod error;
pub mod gradcheck;
mod loss;
mod real;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON, DEFAULT_LR};
pub use error::{EngineError, Result};
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use loss::{cross_entropy, softmax};
pub use real::Real;
pub use tape::{Tape, Var, PROB_FLOOR};
pub use tensor::Tensor;
