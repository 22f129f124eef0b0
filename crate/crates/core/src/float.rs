//! Scalar abstraction for the numeric kernels.
//!
//! The statistics and signal-processing kernels are generic over [`Real`] so
//! they work with `f32` or `f64` (or any other IEEE-like float). The analysis
//! pipeline itself runs at a fixed precision; see the [`crate::Scalar`] alias.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numeric kernels are generic over.
///
/// This is a blanket trait: anything that satisfies the bounds implements it,
/// which in practice means `f32` and `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Send + Sync + 'static
{
    /// Converts an `f64` constant, panicking only for values that cannot be
    /// represented at all (NaN inputs round-trip fine).
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 constant must convert to scalar")
    }

    /// Converts a count into the scalar type.
    fn of_usize(value: usize) -> Self {
        Self::from_usize(value).expect("usize must convert to scalar")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Sum<T> + Debug + Send + Sync + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_generic<T: Real>(values: &[T]) -> T {
        values.iter().copied().sum()
    }

    #[test]
    fn works_for_both_float_widths() {
        assert_eq!(sum_generic(&[1.0f32, 2.0, 3.0]), 6.0f32);
        assert_eq!(sum_generic(&[1.0f64, 2.0, 3.0]), 6.0f64);
        assert_eq!(f32::of(0.5), 0.5f32);
        assert_eq!(f64::of_usize(41), 41.0);
    }
}
