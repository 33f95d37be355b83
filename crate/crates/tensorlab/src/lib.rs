//! Minimal dense-tensor numerics with a recorded computation graph.
//!
//! Values live in flat row-major buffers. Every differentiable operation is
//! recorded on a [`Graph`] as it is evaluated; [`Graph::backward`] replays the
//! tape in reverse and returns the gradient of a scalar loss with respect to
//! every leaf that was registered with `requires_grad`.
//!
//! The crate is generic over [`Real`], which is implemented for `f32` and
//! `f64`. Gradient checks run at 64-bit, training usually at 32-bit.

mod error;
mod graph;
pub mod kernels;
pub mod numeric;
mod optim;
mod tensor;

pub use error::TensorError;
pub use graph::{Gradients, Graph, Var};
pub use optim::{AdamW, AdamWConfig, OptimState};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::LinalgScalar;
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Floating point element type accepted by every kernel.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Lossy for `f32`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
