use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("non-finite input to {op}")]
    NumericInput { op: &'static str },

    #[error("index {index} out of range for {len} classes")]
    Index { index: usize, len: usize },

    #[error("tape state error: {0}")]
    State(&'static str),

    #[error("invalid argument to {op}: {detail}")]
    Argument { op: &'static str, detail: String },
}

impl EngineError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        EngineError::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;
