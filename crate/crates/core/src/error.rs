use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    /// Task and sampler configuration are incompatible.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The sampler state or a gradient became NaN or infinite.
    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("wav format error at byte offset {offset}: {message}")]
    WavFormat { offset: u64, message: String },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Step index carried by the error, if any.
    pub fn step(&self) -> Option<usize> {
        match self {
            Error::NonFinite { step, .. } | Error::Diverged { step, .. } => Some(*step),
            _ => None,
        }
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}
