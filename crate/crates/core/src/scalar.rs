//! Scalar abstraction for the convolution engine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating point element type of tensors and kernel weights: `f32` or `f64`.
///
/// Sample-map weights are always stored in double precision and converted
/// once per tap when they meet tensor data.
pub trait Scalar: Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static {
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to any float type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {
    #[inline(always)]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}
