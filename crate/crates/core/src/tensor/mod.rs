//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are immutable row-major `f64` buffers with an `(N, C, H, W)`
//! convention for grids. The op set is exactly what the refinement network
//! and its losses need: convolution, sigmoid/tanh and a few scalar
//! transcendentals, channel concatenation, bilinear resize, channel/scalar
//! reductions and elementwise arithmetic. [`tape::Tape`] records operations
//! for reverse-mode differentiation; [`gradcheck::grad_check`] verifies any
//! scalar-valued computation against central finite differences.
//!
//! Non-finite values are rejected at construction so failures localize at
//! the op that produced them. All loops run in a fixed order (parallel
//! sections write disjoint outputs), so results are bit-reproducible.

mod gradcheck;
mod kernels;
mod tape;

pub use gradcheck::{grad_check, max_relative_error};
pub use kernels::Conv2dDims;
pub use tape::{Tape, VarId};

use thiserror::Error;

/// Errors from tensor construction and operations.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum TensorError {
    #[error("tensor data length {got} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{ctx}: non-finite value {value} at flat index {index}")]
    NonFinite {
        ctx: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{ctx}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        ctx: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{ctx}: {dim} mismatch, expected {expected}, got {got}")]
    Dim {
        ctx: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{ctx}: shapes {lhs:?} and {rhs:?} do not match")]
    Shape {
        ctx: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("conv2d: kernel extent {size} must be odd")]
    EvenKernel { size: usize },
    #[error("conv2d: stride must be at least 1")]
    ZeroStride,
    #[error(
        "conv2d: empty output extent for input {input}, kernel {kernel}, stride {stride}, pad {pad}"
    )]
    EmptyOutput {
        input: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("concat_channels: no input parts")]
    EmptyConcat,
    #[error("bilinear_resize: target extent {h}x{w} must be at least 1x1")]
    EmptyResize { h: usize, w: usize },
}

/// Largest `f64` strictly below 1; used to keep activations in open intervals.
pub(crate) const ONE_MINUS: f64 = 1.0 - 0.5 * f64::EPSILON;

/// Dense row-major `f64` tensor. `(N, C, H, W)` order for spatial grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    /// Build a tensor, validating length and finiteness of every entry.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::with_ctx("Tensor::new", shape, data)
    }

    pub(crate) fn with_ctx(
        ctx: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TensorError::NonFinite { ctx, index, value });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Result<Self, TensorError> {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    /// Rank-1 single-element tensor, the scalar convention on the tape.
    pub fn scalar(value: f64) -> Result<Self, TensorError> {
        Self::new(vec![1], vec![value])
    }

    /// Mark this tensor as a differentiable leaf when placed on a tape.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for in-place parameter updates. The caller is
    /// responsible for keeping entries finite; [`Tensor::validate_finite`]
    /// re-checks after a batch of updates.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn validate_finite(&self, ctx: &'static str) -> Result<(), TensorError> {
        if let Some((index, &value)) = self.data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TensorError::NonFinite { ctx, index, value });
        }
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Interpret as `(N, C, H, W)`.
    pub fn dims4(&self, ctx: &'static str) -> Result<(usize, usize, usize, usize), TensorError> {
        if self.shape.len() != 4 {
            return Err(TensorError::Rank {
                ctx,
                expected: 4,
                shape: self.shape.clone(),
            });
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    /// Copy channels `[from, to)` of a rank-4 tensor into a new tensor.
    pub fn slice_channels(&self, from: usize, to: usize) -> Result<Tensor, TensorError> {
        let (n, c, h, w) = self.dims4("slice_channels")?;
        if from >= to || to > c {
            return Err(TensorError::Dim {
                ctx: "slice_channels",
                dim: "channel range",
                expected: c,
                got: to,
            });
        }
        let plane = h * w;
        let cs = to - from;
        let mut out = Vec::with_capacity(n * cs * plane);
        for ni in 0..n {
            let base = (ni * c + from) * plane;
            out.extend_from_slice(&self.data[base..base + cs * plane]);
        }
        Tensor::new(vec![n, cs, h, w], out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Tensor, TensorError> {
        Tensor::with_ctx(
            "Tensor::map",
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }
}
