//! Floating point abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the whole crate is generic over: `f32` or `f64`.
///
/// Tolerances are per-type because single precision cannot resolve the
/// defaults used for `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Default primal feasibility tolerance for the LP engine.
    const FEAS_TOL: f64;
    /// Default pivot tolerance for the LP engine.
    const PIVOT_TOL: f64;

    /// Converts an `f64` literal, panicking only on unrepresentable values.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const FEAS_TOL: f64 = 1e-7;
    const PIVOT_TOL: f64 = 1e-9;
}

impl Scalar for f32 {
    const FEAS_TOL: f64 = 1e-4;
    const PIVOT_TOL: f64 = 1e-6;
}
