//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the solver is generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, panicking only if the target type cannot
    /// represent finite doubles at all.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal not representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize not representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `x log x` with the `0 log 0 = 0` convention.
    #[inline]
    fn xlogx(self) -> Self {
        if self == Self::zero() {
            Self::zero()
        } else {
            self * self.ln()
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Neumaier-compensated sum; order is fixed by the iterator so results are
/// reproducible.
pub fn compensated_sum<S: Real, I: IntoIterator<Item = S>>(values: I) -> S {
    let mut sum = S::zero();
    let mut carry = S::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Numerically stable `log Σ exp(x_k)`; returns `-inf` for an empty or
/// all-`-inf` input.
pub fn log_sum_exp<S: Real>(values: &[S]) -> S {
    let max = values.iter().copied().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return max;
    }
    let mut acc = S::zero();
    for &v in values {
        acc += (v - max).exp();
    }
    max + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        let xs = [1e16_f64, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn log_sum_exp_handles_large_and_empty() {
        let v = [1000.0_f64, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
        assert_eq!(0.0_f64.xlogx(), 0.0);
    }
}
