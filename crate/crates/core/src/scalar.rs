//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::str::FromStr;

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Floating point type the geometry and solvers are written against.
///
/// `f64` is the working precision for everything with a published tolerance;
/// `f32` is supported for the algebraic parts and for quick smoke runs.
pub trait Real:
    RealField + Copy + ToPrimitive + FromStr + Display + LowerExp + Debug + Send + Sync
{
}

impl Real for f64 {}
impl Real for f32 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

#[inline]
pub fn abs<T: Real>(x: T) -> T {
    nalgebra::ComplexField::abs(x)
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Machine epsilon of `T`.
#[inline]
pub fn eps<T: Real>() -> T {
    T::default_epsilon()
}
