//! Cholesky factorization and solves for symmetric positive-definite block
//! tridiagonal systems.
//!
//! The crate provides the sequential baseline factorization and three
//! permutation-based parallel strategies (partitioned chunks, the two-level
//! odd/even split, and the fully recursive odd/even ordering), a leveled
//! solve, elimination-tree analysis, an exact flop meter in integer
//! thirds-of-a-flop units, closed-form cost models that reproduce the
//! theoretical speedup curves, a deterministic task-graph scheduler model,
//! and a reproducible SPD instance generator with a dense reference oracle.

pub mod block;
pub mod costmodel;
pub mod error;
pub mod etree;
pub mod io;
pub mod kernels;
pub mod matrix;
pub mod meter;
pub mod oracle;
pub mod partfactor;
pub mod probgen;
pub mod ratio;
pub mod scalar;
pub mod schedule;
pub mod seqfactor;
pub mod stagefactor;
pub mod verify;

pub use block::DenseBlock;
pub use error::{Error, FailSite, Result};
pub use matrix::{BlockPermutation, BlockTridiag, RhsBlocks};
pub use meter::{FlopMeter, Workers};
pub use scalar::Scalar;
pub use stagefactor::{FactorMode, RunOptions};
