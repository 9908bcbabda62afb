//! Dense tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value: row-major data plus a shape. Differentiable
//! computation happens on a [`Graph`] (a Wengert tape): recording an op runs
//! its forward kernel immediately and stores what the backward rule needs;
//! [`Graph::backward`] replays the tape in reverse. Node handles are [`NodeId`]s.

mod graph;
mod gradcheck;

pub use gradcheck::{grad_check, GradCheckReport, REL_FLOOR};
pub use graph::{Graph, NodeId};

use thiserror::Error;

/// Element type for all tensor data. `f64` unless the `f32` feature is on;
/// tests and gradient checks assume the default.
#[cfg(feature = "f32")]
pub type Real = f32;
#[cfg(not(feature = "f32"))]
pub type Real = f64;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: expected rank-{expected} tensor, got shape {shape:?}")]
    BadRank { op: &'static str, expected: usize, shape: Vec<usize> },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    BadAxis { op: &'static str, axis: usize, shape: Vec<usize> },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{op}: index {index} out of range ({len} rows)")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("{context}: non-finite value encountered")]
    NonFinite { context: String },
    #[error("dropout rate {0} outside [0, 1)")]
    BadDropoutRate(Real),
    #[error("gradient check requires deterministic eval mode, but the graph records training-mode dropout")]
    StochasticGraph,
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major tensor value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    /// Build from raw parts. Panics if `data.len() != product(shape)`;
    /// construction sites always know their shapes statically.
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: Real) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    /// Row vector `[1 x n]`.
    pub fn row(data: Vec<Real>) -> Self {
        Tensor { shape: vec![1, data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<Real>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rank-2 dimensions, erroring otherwise. Most graph ops are matrix ops.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::BadRank { op, expected: 2, shape: self.shape.clone() }),
        }
    }

    /// Single element of a `[1]`/`[1 x 1]` tensor.
    pub fn item(&self) -> Real {
        assert_eq!(self.data.len(), 1, "item() on tensor with shape {:?}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `a[m x k] * b[k x n]`, row-major, ikj loop order.
pub(crate) fn matmul_raw(a: &[Real], b: &[Real], m: usize, k: usize, n: usize) -> Vec<Real> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[Real], rows: usize, cols: usize) -> Vec<Real> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

pub(crate) fn sigmoid_raw(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place stable softmax over each `lane_len`-sized contiguous lane.
pub(crate) fn softmax_lanes(data: &mut [Real], lane_len: usize) {
    debug_assert_eq!(data.len() % lane_len.max(1), 0);
    for lane in data.chunks_mut(lane_len) {
        let max = lane.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        let mut sum = 0.0;
        for v in lane.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in lane.iter_mut() {
            *v /= sum;
        }
    }
}
