//! Floating-point scalar abstraction for the numeric core.
//!
//! Reward, advantage, and objective math is generic over [`Scalar`] so the
//! same code runs in `f32` or `f64`. Concrete `f64` aliases live at the crate
//! root; answer equivalence checking is exact rational arithmetic and does not
//! go through this trait.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    /// Lossless-enough conversion from a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable as scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Arithmetic mean. Empty input yields zero.
pub fn mean<S: Scalar>(values: &[S]) -> S {
    if values.is_empty() {
        return S::zero();
    }
    values.iter().copied().sum::<S>() / S::from_count(values.len())
}

/// Population standard deviation (divides by N, not N-1).
pub fn population_std<S: Scalar>(values: &[S]) -> S {
    if values.is_empty() {
        return S::zero();
    }
    let m = mean(values);
    let var = values
        .iter()
        .map(|&v| (v - m) * (v - m))
        .sum::<S>()
        / S::from_count(values.len());
    var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_std_basics() {
        let v = [1.0f64, 1.0, 0.0, 0.0];
        assert_eq!(mean(&v), 0.5);
        assert_eq!(population_std(&v), 0.5);
    }

    #[test]
    fn works_in_f32() {
        let v = [2.0f32, 4.0];
        assert_eq!(mean(&v), 3.0);
        assert_eq!(population_std(&v), 1.0);
    }
}
