//! Floating point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar used by geometry, losses, scoring and evaluation: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn lit(v: f64) -> Self;

    /// Widens to `f64` (exact for both supported types).
    fn as_f64(self) -> f64;

    /// Narrows to `f32` for storage in grids.
    fn as_f32(self) -> f32;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn lit(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn as_f32(self) -> f32 {
                self as f32
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Largest `f32` strictly below 1.0.
pub(crate) const F32_BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn below_one_is_adjacent() {
        assert!(F32_BELOW_ONE < 1.0);
        assert_eq!(f32::from_bits(F32_BELOW_ONE.to_bits() + 1), 1.0);
    }

    #[test]
    fn literal_round_trips() {
        assert_eq!(<f64 as Scalar>::lit(0.25), 0.25);
        assert_eq!(<f32 as Scalar>::lit(0.25).as_f64(), 0.25);
    }
}
