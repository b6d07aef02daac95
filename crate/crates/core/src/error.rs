use thiserror::Error;

use crate::amount::Amount;

/// Failures of exact integer arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MathError {
    #[error("arithmetic overflow past 256 bits")]
    Overflow,
    #[error("arithmetic underflow")]
    Underflow,
    #[error("division by zero")]
    DivisionByZero,
}

/// Errors raised while evaluating swap functions.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SwapError {
    #[error("input {input} exceeds liquidity capacity {capacity}")]
    CapacityExceeded { input: Amount, capacity: Amount },
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("invalid swap function: {0}")]
    Invalid(String),
}

impl From<crate::amount::ParseAmountError> for SwapError {
    fn from(e: crate::amount::ParseAmountError) -> Self {
        SwapError::Invalid(e.to_string())
    }
}

/// Snapshot-level construction errors.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(String),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
}

/// Errors surfaced by routing entry points.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("no route from {source_token} to {target}")]
    NoRoute { source_token: String, target: String },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Swap(#[from] SwapError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

impl From<MathError> for RouteError {
    fn from(e: MathError) -> Self {
        RouteError::Swap(SwapError::Math(e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocationError {
    #[error("allocation needs at least one path")]
    NoPaths,
    #[error("input amount must be positive")]
    ZeroInput,
    #[error("paths share pool {0}")]
    SharedPool(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("initial allocation is infeasible: {0}")]
    Infeasible(SwapError),
    #[error("grid oracle supports at most {max} paths, got {got}")]
    TooManyPaths { max: usize, got: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}
