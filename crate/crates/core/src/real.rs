//! Scalar abstraction for the numeric kernels.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the numeric code is generic over.
///
/// Implemented for `f32` and `f64`. The extra conversion helpers exist because
/// `FromPrimitive::from_f64` returns an `Option` that is pure noise for float
/// targets; `of` and `into_f64` are the infallible versions used for literals
/// and accumulator hand-offs.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> f32 {
        x as f32
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> f64 {
        x
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self
    }
}
