use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular system in {context}: {detail}")]
    Singular { context: &'static str, detail: String },

    #[error("chain did not reach stationarity after {iterations} iterations (residual {residual:e})")]
    NotErgodic { iterations: usize, residual: f64 },

    #[error("state {state} has zero weight; projection needs a strictly positive distribution")]
    ZeroWeight { state: usize },

    #[error("behaviour assigns zero probability to an action the target can take (target {target:e})")]
    AbsoluteContinuity { target: f64 },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("trajectory holds {available} transitions but {requested} were requested; regenerate a longer store")]
    InsufficientData { available: usize, requested: usize },

    #[error("malformed input at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("trajectory record {record} is inconsistent: {detail}")]
    Corrupt { record: usize, detail: String },

    #[error("checksum mismatch: header says {expected}, records hash to {found}")]
    Checksum { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn non_finite(ctx: impl Into<String>) -> Self {
        Error::NonFinite {
            context: ctx.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::NotErgodic { .. }
                | Error::ZeroWeight { .. }
                | Error::NonFinite { .. }
                | Error::AbsoluteContinuity { .. }
        )
    }
}
