//! Crate-wide error types.

use thiserror::Error;

/// Where a pivot failure occurred, in the coordinates of the strategy that hit it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailSite {
    /// Block index in the natural ordering (1-based).
    Block { block: usize },
    /// Inside a partition chain: (partition, local block), both 1-based.
    Partition { partition: usize, local: usize },
    /// A pivot block moved to the end of the partition ordering (1-based partition index it follows).
    Pivot { pivot: usize },
    /// Stride-level coordinates of the multi-stage orderings (1-based).
    Leveled { level: usize, column: usize },
}

impl std::fmt::Display for FailSite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailSite::Block { block } => write!(f, "block {block}"),
            FailSite::Partition { partition, local } => {
                write!(f, "partition {partition}, local block {local}")
            }
            FailSite::Pivot { pivot } => write!(f, "pivot {pivot}"),
            FailSite::Leveled { level, column } => write!(f, "level {level}, column {column}"),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Error {
    #[error("matrix is not positive definite at {site} (pivot {pivot})")]
    NotPositiveDefinite { site: FailSite, pivot: usize },

    #[error("triangular block has a zero diagonal entry")]
    SingularTriangular,

    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("infeasible partition: {nblocks} blocks cannot host {parts} partitions (need at least {min})")]
    InfeasiblePartition {
        nblocks: usize,
        parts: usize,
        min: usize,
    },

    #[error("factorization did not publish level {level}; solve cannot proceed")]
    IncompleteFactor { level: usize },

    #[error("task graph deadlock: {remaining} nodes unreachable")]
    DeadlockDetected { remaining: usize },

    #[error("io error: {0}")]
    Io(String),

    #[error("bad file format: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
