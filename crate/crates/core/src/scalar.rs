//! Floating-point abstraction shared by the environment, the oracle and the networks.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar used throughout the crate. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal or measurement into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip<F: Scalar>(x: f64) -> f64 {
        F::lit(x).as_f64()
    }

    #[test]
    fn literal_conversion() {
        assert_eq!(round_trip::<f64>(0.4), 0.4);
        assert!((round_trip::<f32>(0.4) - 0.4).abs() < 1e-7);
        assert_eq!(f32::from_count(80), 80.0);
    }
}
