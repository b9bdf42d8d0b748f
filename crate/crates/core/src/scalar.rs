//! Floating-point scalar abstraction shared by every learnable computation.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the tensor engine is generic over: `f32` or `f64`.
///
/// Training defaults to `f64` (see the aliases at the crate root); `f32` is
/// supported for inference and for exercising the generic code paths.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Error function. `num_traits::Float` has no `erf`, so each width
    /// dispatches to libm.
    fn erf(self) -> Self;

    /// Lossy conversion from `f64`; used for constants and checkpoint data.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_matches_known_values() {
        assert!((Scalar::erf(1.0f64) - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert!((Scalar::erf(0.5f32) - 0.520_499_9).abs() < 1e-6);
        assert_eq!(Scalar::erf(0.0f64), 0.0);
    }

    #[test]
    fn round_trip_through_f64() {
        assert_eq!(f32::of(0.25).as_f64(), 0.25);
        assert_eq!(f64::of(-3.5), -3.5);
    }
}
