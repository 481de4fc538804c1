//! Dense linear algebra and reverse-mode automatic differentiation.
//!
//! Just enough machinery for GRUs, additive attention, softmax losses and the
//! segmentation-length penalty: a row-major [`Matrix`], a [`Graph`] recording
//! primitives as they are evaluated, a [`ParameterStore`] of named trainable
//! matrices, and a finite-difference checker.

mod check;
mod graph;
mod matrix;
mod params;

use thiserror::Error;

pub use check::{finite_diff_check, relative_error, GradCheckReport, ParamCheck};
pub use graph::{smooth_abs, Graph, NodeGradients, Var};
pub use matrix::Matrix;
pub use params::{Gradients, ParamId, ParameterStore};

/// Offset inside the square root of [`smooth_abs`].
pub const SMOOTH_ABS_EPS: f64 = 0.001;

fn fmt_shape(s: (usize, usize)) -> String {
    format!("{}x{}", s.0, s.1)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("{op}: incompatible shapes {} and {}", fmt_shape(*.left), fmt_shape(*.right))]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("masked_softmax: row {row} has no unmasked entry")]
    FullyMaskedRow { row: usize },
    #[error("{op}: row {row} sums to zero or a non-finite value")]
    DegenerateRow { op: &'static str, row: usize },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: {detail}")]
    BadArgument { op: &'static str, detail: String },
    #[error("backward needs a 1x1 root, got {}", fmt_shape(*.shape))]
    NonScalarRoot { shape: (usize, usize) },
    #[error("buffer of length {len} cannot fill a {rows}x{cols} matrix")]
    BadBuffer { rows: usize, cols: usize, len: usize },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("loss became non-finite while perturbing parameter `{param}`")]
    NonFiniteLoss { param: String },
}

impl GradError {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        GradError::ShapeMismatch { op, left, right }
    }
}
