//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type the model math is written against.
///
/// Implemented for `f32` and `f64`. Training defaults to `f64`; `f32` halves
/// the memory traffic of the convolution-heavy paths.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal or constant.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Inner product with four independent partial sums so the loop pipelines
/// and vectorizes. The summation order is fixed, so results are reproducible.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = S::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`.
#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Hyperbolic tangent through a single `exp`, roughly twice as fast as the
/// libm routine. Absolute error stays within a few ulps of 1.
#[inline]
pub fn tanh<S: Scalar>(x: S) -> S {
    let two = S::lit(2.0);
    S::one() - two / ((two * x).exp() + S::one())
}

/// Logistic sigmoid, stable for large negative inputs.
#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub fn logit<S: Scalar>(p: S) -> S {
    (p / (S::one() - p)).ln()
}

/// `ln Σ exp(v)` with max-shift stabilization. Returns `-inf` for an empty slice.
pub fn log_sum_exp<S: Scalar>(values: &[S]) -> S {
    let max = values.iter().copied().fold(S::neg_infinity(), S::max);
    if !max.is_finite() {
        return max;
    }
    let sum: S = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Numerically stable softmax written into `out`.
pub fn softmax_into<S: Scalar>(values: &[S], out: &mut [S]) {
    let lse = log_sum_exp(values);
    for (o, &v) in out.iter_mut().zip(values) {
        *o = (v - lse).exp();
    }
}

pub fn log_softmax<S: Scalar>(values: &[S]) -> Vec<S> {
    let lse = log_sum_exp(values);
    values.iter().map(|&v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_naive_for_moderate_values() {
        let v = [0.3_f64, -1.2, 2.5];
        let naive = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v) - naive).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_survives_large_magnitudes() {
        let v = [-1000.0_f64, -1000.0];
        assert!((log_sum_exp(&v) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_logit_inverse() {
        for &p in &[1e-4_f64, 0.2, 0.5, 0.9999] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
        assert!((sigmoid(0.0_f32) - 0.5).abs() < 1e-7);
    }
}
