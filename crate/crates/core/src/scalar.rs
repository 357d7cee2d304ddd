//! Floating-point abstraction shared by the numeric kernels.

use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Real scalar usable by the quantizers, linear algebra, surrogate and
/// Pareto code: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal or intermediate into `Self`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("Scalar converts to f64")
    }

    /// Machine epsilon as `f64`, used for scale-aware tolerances.
    #[inline]
    fn eps() -> f64 {
        <Self as Float>::epsilon().as_f64()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
