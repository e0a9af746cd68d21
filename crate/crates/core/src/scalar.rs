//! Scalar abstraction for the numerical kernels.
//!
//! Everything in [`crate::math`] is written against [`Scalar`], so the same
//! kernels run over `f32` and `f64`. The pipeline layers above it fix the
//! scalar to `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the probability kernels and networks.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Allowed deviation of a probability vector's sum from one.
    fn sum_tolerance() -> Self;

    /// Floor applied to probabilities before taking a logarithm.
    fn prob_floor() -> Self;

    /// Lossy conversion from `f64`; constants in the kernels are written as `f64`.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn sum_tolerance() -> Self {
        1e-6
    }

    fn prob_floor() -> Self {
        1e-10
    }
}

impl Scalar for f32 {
    // Accumulated rounding over a few hundred classes exceeds 1e-6 in single precision.
    fn sum_tolerance() -> Self {
        1e-4
    }

    fn prob_floor() -> Self {
        1e-10
    }
}
