//! Floating-point scalar abstraction shared by every kernel.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar type for all numerical kernels: `f32` or `f64`.
///
/// Everything downstream (flows, grids, estimators, solvers) is generic over
/// this trait; concrete aliases for `f64` live at the crate root.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` constant into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("constant representable in scalar type")
    }

    /// Lossy view as `f64`, for reporting and I/O.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Deterministic pairwise sum: the result depends only on the order of the
/// slice, never on how the work that produced it was scheduled.
pub fn pairwise_sum<F: Scalar>(values: &[F]) -> F {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        let mut acc = F::zero();
        for &v in values {
            acc += v;
        }
        acc
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Mean and standard error of the mean via a pairwise two-pass reduction.
///
/// Returns `(mean, stderr)`; the standard error is the sample standard
/// deviation divided by sqrt(n), and zero for n < 2.
pub fn mean_stderr<F: Scalar>(values: &[F]) -> (F, F) {
    let n = values.len();
    if n == 0 {
        return (F::zero(), F::zero());
    }
    let nf = F::from_usize(n).unwrap();
    let mean = pairwise_sum(values) / nf;
    if n < 2 {
        return (mean, F::zero());
    }
    let sq: Vec<F> = values.iter().map(|&v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (nf - F::one());
    (mean, (var / nf).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let seq: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - seq).abs() < 1e-10);
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        let xs = vec![2.5f64; 17];
        let (m, se) = mean_stderr(&xs);
        assert_eq!(m, 2.5);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn single_sample_has_zero_stderr() {
        let (m, se) = mean_stderr(&[7.0f64]);
        assert_eq!(m, 7.0);
        assert_eq!(se, 0.0);
    }
}
