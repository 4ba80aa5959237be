//! Differentiable tensor core: a tape of dense 2-D primitives with reverse-mode
//! gradients, log-space reductions, and a finite-difference gradient checker.

mod dropout;
mod gradcheck;
mod graph;
mod logspace;
mod params;
mod scalar;

pub use dropout::Dropout;
pub use gradcheck::{grad_check, grad_check_many};
pub use graph::{CustomOp, Gradients, Graph, Tensor, Var, LAYER_NORM_EPS};
pub use logspace::{log_add, logsumexp, logsumexp_iter};
pub use params::{BoundParams, ParamId, ParamStore};
pub use scalar::{FloatMode, Scalar};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("empty reduction")]
    EmptyReduction,
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: index {index} out of range for shape {shape:?}")]
    OutOfRange {
        op: &'static str,
        shape: (usize, usize),
        index: usize,
    },
    #[error("function value is not finite: {0}")]
    NonFinite(f64),
    #[error("{0}")]
    Invalid(String),
}
