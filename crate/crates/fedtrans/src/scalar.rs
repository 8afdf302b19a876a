//! Scalar abstraction for the numeric kernels.
//!
//! The loss/solver/metric code is written once against [`Scalar`] and
//! instantiated at `f32` or `f64`.  Everything the kernels need beyond
//! [`num_traits::Float`] is conversions from literal constants and the
//! operator-assign forms, plus the thread-safety bounds required to evaluate
//! objectives inside parallel loops.

use std::fmt::{Debug, Display};

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point scalar usable by the generic numeric kernels.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + ScalarOperand + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion to `f64` for reporting.
    fn into_f64(self) -> f64;
}

impl Scalar for f32 {
    fn into_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn into_f64(self) -> f64 {
        self
    }
}

/// Converts an `f64` constant into the kernel scalar type.  Constants in the
/// kernels are written as `f64` literals and converted through this helper.
#[inline]
pub fn real<S: Scalar>(value: f64) -> S {
    <S as FromPrimitive>::from_f64(value).expect("finite f64 constant converts")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_conversion_round_trips_for_both_widths() {
        assert_eq!(real::<f64>(0.25), 0.25);
        assert_eq!(real::<f32>(0.25), 0.25f32);
        assert_eq!(0.25f32.into_f64(), 0.25);
    }
}
