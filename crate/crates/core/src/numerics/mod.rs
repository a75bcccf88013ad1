//! Dense 2-D tensors with reverse-mode differentiation, the two training
//! losses, and the Adam optimizer with a step learning-rate schedule.
//!
//! Everything is rank 2: vectors are `n × 1` or `1 × n`, scalars are `1 × 1`.
//! The engine is generic over [`Real`] so the same model code runs in `f32`
//! for training and `f64` for finite-difference gradient checks.

mod checkpoint;
mod optim;
mod params;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::Float;
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_KIND, CHECKPOINT_SCHEMA_VERSION};
pub use optim::{Adam, AdamConfig, StepSchedule};
pub use params::ParamStore;
pub use tape::{cosine, sigmoid, softmax_rows, Gradients, Tape, Var};

/// Dense row-major matrix; the only tensor rank the engine needs.
pub type Tensor<T> = Array2<T>;

/// Floating-point element type accepted by the engine.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn of(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range for {op} (len {len})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("loss must be a 1x1 tensor, got {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("label {label} out of range for {op}")]
    LabelOutOfRange { op: &'static str, label: i64 },
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidDropout(f64),
}

pub(crate) fn shape_of<T>(a: &Array2<T>) -> Vec<usize> {
    a.shape().to_vec()
}

/// Converts a matrix between element types.
pub fn cast_matrix<A: Real, B: Real>(a: &Array2<A>) -> Array2<B> {
    a.mapv(|x| B::of(x.to_f64()))
}
