//! Numeric element type shared by the inference engine, the mutators and the
//! clustering code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Floating-point element type usable throughout the crate.
///
/// Implemented for `f32` and `f64`. Model files always store 32-bit values;
/// the scalar type only controls the arithmetic precision in memory.
pub trait Scalar:
    Float + FromPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f32_lossless(v: f32) -> Self;

    fn to_f64_lossy(self) -> f64;

    fn to_f32_lossy(self) -> f32;

    fn from_f64_lossy(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn from_f32_lossless(v: f32) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f32_lossless(v: f32) -> Self {
        v as f64
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self as f32
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

/// Euclidean distance between two equal-length slices.
pub fn euclidean<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |acc, v| acc + v)
        .sqrt()
}
