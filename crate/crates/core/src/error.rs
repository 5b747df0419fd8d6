use thiserror::Error;

/// Errors raised by the RSMA model and solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RsmaError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("beamformer violates the power budget: trace(WW^H) = {trace} > {budget}")]
    Infeasible { trace: f64, budget: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("channel file: {0}")]
    ChannelFile(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, RsmaError>;
