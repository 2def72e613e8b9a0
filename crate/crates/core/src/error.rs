use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible operands: {0}")]
    IncompatibleOperands(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("solution diverged at step {step} (t = {time}): state {state:?}")]
    Divergence {
        step: usize,
        time: f64,
        state: Vec<f64>,
    },

    #[error("coefficient `{which}` returned a non-finite value at t = {time}, x = {state:?}")]
    CallbackFailure {
        which: &'static str,
        time: f64,
        state: Vec<f64>,
    },

    #[error("non-finite log-weight for sample {sample} at node {node}")]
    WeightOverflow { sample: usize, node: usize },

    #[error("oracle failure: {0}")]
    OracleFailure(String),

    #[error("coefficient outside the preset registry: {0}")]
    PresetViolation(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::IncompatibleOperands(msg.into())
}
