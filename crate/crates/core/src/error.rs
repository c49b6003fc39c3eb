use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },

    #[error("probability {value} at ({row}, {col}) is outside [0, 1]")]
    Probability { row: usize, col: usize, value: f64 },

    #[error("zero probability at target symbol {symbol} in row {row}")]
    ZeroProbability { row: usize, symbol: usize },

    #[error("symbol {symbol} in row {row} is out of range for vocabulary of {vocab}")]
    Symbol { row: usize, symbol: usize, vocab: usize },

    #[error("non-finite gradient in block {block}")]
    NonFiniteGradient { block: String },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("trace: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }

    /// Process exit code for this error class: 1 usage, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Symbol { .. } => 1,
            Error::Shape { .. }
            | Error::Probability { .. }
            | Error::ZeroProbability { .. }
            | Error::NonFiniteGradient { .. }
            | Error::NonFiniteLoss(_)
            | Error::GradCheck(_) => 2,
            Error::Corpus(_) | Error::Checkpoint(_) | Error::Trace(_) | Error::Io(_) => 3,
        }
    }
}
