//! Scalar trait bounds shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{FromPrimitive, NumAssignOps, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the whole crate is generic over.
///
/// Implemented for `f32` and `f64`; pipelines pick one and everything
/// (encoders, heuristics, detector, metrics) follows.
pub trait Float:
    num_traits::Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
}

impl<T> Float for T where
    T: num_traits::Float
        + FromPrimitive
        + ToPrimitive
        + NumAssignOps
        + ScalarOperand
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + Serialize
        + DeserializeOwned
        + 'static
{
}

/// Shorthand for converting an `f64` literal into the generic scalar.
#[inline]
pub fn cast<F: Float>(x: f64) -> F {
    F::from_f64(x).expect("f64 must convert into the scalar type")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cast_round_trips_for_both_widths() {
        let a: f32 = cast(0.25);
        let b: f64 = cast(0.25);
        assert_eq!(a, 0.25f32);
        assert_eq!(b, 0.25f64);
    }
}
