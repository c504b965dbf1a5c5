use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("layer {layer}: {reason}")]
    Layer { layer: usize, reason: String },

    #[error("neuron layer already advanced through all {steps} time-steps")]
    StepBeyondHorizon { steps: usize },

    #[error("non-binary spike payload leaving layer {layer}")]
    NonBinaryPayload { layer: usize },

    #[error("trace does not match model: {0}")]
    TraceMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn layer(layer: usize, reason: impl Into<String>) -> Self {
        Error::Layer {
            layer,
            reason: reason.into(),
        }
    }
}
