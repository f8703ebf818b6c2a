//! Minimal reverse-mode autodiff, dense linear algebra and optimization.
//!
//! Design: a `Tensor` is a flat buffer + shape; a `Graph` is an append-only
//! tape of tensor-level operations. Creation order is topological order, so
//! the backward pass is a single reverse sweep. Graphs are built per batch
//! and dropped after the gradients are extracted.

mod graph;
mod optim;
mod tensor;

pub mod check;

pub use graph::{Graph, Var};
pub use optim::{Adam, CosineSchedule};
pub use tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

use thiserror::Error;

/// Errors from tensor algebra and the tape.
#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value detected in {0}")]
    NonFinite(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, NumError>;
