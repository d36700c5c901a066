use std::fmt;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the numerical core is written against.
///
/// Implemented for `f32` and `f64`. Everything in this crate that does
/// floating-point work is generic over `T: Real`; the concrete `f64`
/// aliases at the crate root are what the CLI and the simulation harness use.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn infinity() -> Self {
        Self::lit(f64::INFINITY)
    }

    #[inline]
    fn from_count(k: usize) -> Self {
        <Self as FromPrimitive>::from_usize(k).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Tolerance floor for this precision: never tighter than `k` machine epsilons.
    #[inline]
    fn tol_floor(requested: f64, k: f64) -> Self {
        let eps = Self::default_epsilon().as_f64();
        Self::lit(requested.max(k * eps))
    }
}

impl Real for f32 {}
impl Real for f64 {}
