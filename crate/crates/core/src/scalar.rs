//! Scalar abstraction for the numeric kernels.
//!
//! The network, encoder, and tabular-lab math are generic over [`Scalar`] so
//! they run in f32 or f64. The simulator, trainer, and CLI pin [`crate::Real`]
//! (f64); gradient checks rely on 64-bit precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar: f32 or f64.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy cast into f64 (exact for f32/f64 values).
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}

/// Cast an f64 constant into the scalar type.
#[inline]
pub fn cast<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("constant representable in scalar type")
}
