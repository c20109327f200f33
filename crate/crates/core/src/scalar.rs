//! Scalar abstraction shared by the element-wise parts of the toolkit.
//!
//! Geometry, the covariance kernel and the Tukey g-and-h transform are written
//! once over [`Real`] and instantiated for `f32` and `f64`. The matrix-level
//! estimators (likelihoods, S-BLUE, local designs) work in `f64`.

use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Default + Send + Sync + nalgebra::Scalar + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

/// Lossy conversion to `f64`, used to reach the special-function routines.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
