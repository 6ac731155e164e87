//! Storage scalar abstraction.
//!
//! Every numeric container in the crate is generic over [`Scalar`]. Reductions
//! always accumulate in `f64` regardless of the storage type, so error bounds
//! stated for the 64-bit path also bound the 32-bit path up to the final
//! rounding of each stored value.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Short name used in config echoes and file headers.
    const NAME: &'static str;

    fn to_acc(self) -> f64;
    fn from_acc(value: f64) -> Self;
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn to_acc(self) -> f64 {
        self
    }

    #[inline(always)]
    fn from_acc(value: f64) -> Self {
        value
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn to_acc(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn from_acc(value: f64) -> Self {
        value as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_round_trip_is_identity() {
        for v in [0.0, -1.5, 1e-300, f64::MAX] {
            assert_eq!(f64::from_acc(v.to_acc()).to_bits(), v.to_bits());
        }
    }

    #[test]
    fn f32_widens_exactly() {
        let v = 0.1f32;
        assert_eq!(f32::from_acc(v.to_acc()), v);
    }
}
