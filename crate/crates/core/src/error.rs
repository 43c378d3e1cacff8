use thiserror::Error;

/// Errors raised by the engines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FluctError {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The requested state space is larger than the configured cap.
    #[error("resource limit: {what} = {requested} exceeds cap {cap}")]
    ResourceLimit {
        what: &'static str,
        requested: usize,
        cap: usize,
    },

    /// An iterative solver ran out of iterations.
    #[error("numerical failure in {what}: residual {residual:e} after {iterations} iterations")]
    NumericalFailure {
        what: &'static str,
        residual: f64,
        iterations: usize,
    },

    /// The Legendre-transform maximiser sits on the edge of the supplied grid.
    #[error("optimum unbracketed: best grid point lambda = {lambda} is at the grid edge")]
    UnbracketedOptimum { lambda: f64 },

    /// Free-energy differences are undefined at infinite temperature.
    #[error("degenerate inverse temperature: beta must be > 0 here")]
    DegenerateBeta,

    /// A jump has zero rate under one of the two compared processes.
    #[error("undefined path density: zero-rate jump at t = {time}")]
    UndefinedDensity { time: f64 },
}

pub type Result<T> = std::result::Result<T, FluctError>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(FluctError::Contract(msg.into()))
}
