//! Scalar abstraction for the closed-form models.
//!
//! Every analytical expression is written once against [`Scalar`] and can be
//! evaluated in `f64` (the default everywhere) or `f32`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Euler-Mascheroni constant.
    fn euler_gamma() -> Self {
        Self::from_f64(0.577_215_664_901_532_9).unwrap()
    }

    /// Lossless for every `usize` that fits the mantissa; rounds otherwise.
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).unwrap()
    }

    fn of_f64(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    fn two() -> Self {
        Self::one() + Self::one()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Partial harmonic number `H_m = 1 + 1/2 + ... + 1/m`, summed smallest term first.
pub fn harmonic<T: Scalar>(m: usize) -> T {
    (1..=m).rev().fold(T::zero(), |acc, k| acc + T::one() / T::of_usize(k))
}
