use std::io;

use thiserror::Error;

/// Errors produced anywhere in the allocation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dataset needs at least {needed} samples, got {got}")]
    EmptyDataset { needed: usize, got: usize },

    #[error("label for sample {0} is infeasible")]
    InfeasibleLabel(usize),

    #[error("missing labels: {0}")]
    MissingLabels(String),

    #[error("missing dependency: {0}")]
    MissingDependency(String),

    #[error("exhaustive search needs {count} candidates, budget is {cap}")]
    BudgetExceeded { count: u128, cap: u128 },

    #[error("batch normalization in train mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
