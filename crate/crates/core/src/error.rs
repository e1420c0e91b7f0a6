use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("svd failed to converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("training diverged at epoch {epoch}: loss {loss:e} exceeds {limit:e}")]
    Diverged {
        epoch: usize,
        loss: f64,
        limit: f64,
        history: Vec<f64>,
    },
    #[error("state became non-finite at t = {time}")]
    NonFiniteState { time: f64 },
    #[error("simulation failed for initial conditions {ids:?}")]
    SimulationFailed { ids: Vec<usize> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("no trainable parameters")]
    NoTrainableParameters,
    #[error("output row {0} of W_h is zero")]
    ZeroOutputRow(usize),
    #[error("trajectory {ic_id} has {len} samples, need at least {min}")]
    TrajectoryTooShort { ic_id: usize, len: usize, min: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("every grid combination failed: {diagnostics:?}")]
    AllCombinationsFailed { diagnostics: Vec<String> },
}

pub(crate) fn mismatch(op: &'static str, expected: impl core::fmt::Display, found: impl core::fmt::Display) -> Error {
    use alloc::string::ToString;
    Error::DimensionMismatch {
        op,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
