use alloc::boxed::Box;
use alloc::string::String;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("adaptive integration failed on [{start}, {end}] s: {reason}")]
    Integration {
        start: f64,
        end: f64,
        reason: &'static str,
    },

    #[error("linear solver stalled after {iterations} iterations (relative residual {residual:e})")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error("forward model failed at quadrature node {node}: {source}")]
    Node { node: usize, source: Box<Error> },

    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),

    #[error("peak band {band} has {available} candidate cells, {required} required")]
    BandShortage {
        band: usize,
        available: usize,
        required: usize,
    },

    #[error("field went negative ({value:e}) at t = {time} s")]
    NegativeField { value: f64, time: f64 },

    #[error("cell {cell} has zero peak pyruvate signal and cannot be scaled for noise")]
    UnusableCell { cell: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
