use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("input has {got} columns, network expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("layer {index}: {reason}")]
    InvalidLayer { index: usize, reason: String },
    #[error("backward called without a cached forward pass")]
    NoForwardCache,
    #[error("upstream gradient has shape {got:?}, expected {expected:?}")]
    UpstreamShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("parameter vector has {got} entries, layout needs {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("hidden width {width} is not divisible by {users} users")]
    Indivisible { width: usize, users: usize },
}
