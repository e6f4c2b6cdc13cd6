//! Scalar abstraction: all core math is generic over `f32`/`f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar for network parameters, simulator state and costs.
///
/// Random draws and loss accumulation always go through `f64` (see
/// [`Scalar::of`] / [`Scalar::f64`]), so switching the parameter type only
/// changes storage and arithmetic precision, never the sampled streams.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Narrowing cast from `f64`.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 -> Scalar cast")
    }

    /// Widening cast to `f64`.
    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("Scalar -> f64 cast")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn casts_round_trip_for_representable_values() {
        assert_eq!(f32::of(0.25), 0.25f32);
        assert_eq!(0.25f32.f64(), 0.25f64);
        assert_eq!(f64::of(-1.5), -1.5f64);
    }
}
