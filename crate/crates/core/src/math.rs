//! Scalar and small-vector numerics shared by every module.
//!
//! All transcendental functions go through `libm` so that `std` and `no_std`
//! builds produce identical bits.

use alloc::format;

use crate::{Error, Result};

/// Floor applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
/// Upper bound on arguments passed to `exp`.
pub const EXP_CAP: f64 = 700.0;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

/// `exp` with its argument capped at [`EXP_CAP`].
#[inline]
pub fn exp_capped(x: f64) -> f64 {
    libm::exp(x.min(EXP_CAP))
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln(n!)` for a nonnegative integer-valued `n`.
#[inline]
pub fn ln_factorial(n: f64) -> f64 {
    if n < 2.0 {
        0.0
    } else {
        libm::lgamma(n + 1.0)
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Clamp a probability into `[PROB_FLOOR, 1 - PROB_FLOOR]`; the flag reports
/// whether the clamp was active (the derivative is zero there).
#[inline]
pub fn clamp_prob(p: f64) -> (f64, bool) {
    if p < PROB_FLOOR {
        (PROB_FLOOR, true)
    } else if p > 1.0 - PROB_FLOOR {
        (1.0 - PROB_FLOOR, true)
    } else {
        (p, false)
    }
}

pub fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::InvalidArgument(format!(
            "{what}: entry {i} is not finite ({})",
            values[i]
        ))),
    }
}

/// Row softmax computed with max subtraction; `out` must have `v.len()` entries.
/// Does not validate finiteness (hot path); see [`softmax_row`].
#[inline]
pub fn softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        *o = libm::exp(x - max);
        sum += *o;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Softmax of a row of finite reals onto the simplex.
pub fn softmax_row(v: &[f64]) -> Result<alloc::vec::Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty row".into()));
    }
    ensure_finite(v, "softmax input")?;
    let mut out = alloc::vec![0.0; v.len()];
    softmax_into(v, &mut out);
    Ok(out)
}

/// Vector-Jacobian product of the softmax: `J(s) a = s * (a - <s, a>)`.
#[inline]
pub fn softmax_vjp(s: &[f64], adj: &[f64], out: &mut [f64]) {
    let dot: f64 = s.iter().zip(adj).map(|(a, b)| a * b).sum();
    for ((o, &sk), &ak) in out.iter_mut().zip(s).zip(adj) {
        *o = sk * (ak - dot);
    }
}

/// `ln N(x; mean, variance)`.
#[inline]
pub fn normal_ln_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / variance - 0.5 * (LN_2PI + ln(variance))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let s = softmax_row(&[0.0, 0.0, 0.0]).unwrap();
        for x in &s {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_row(&[core::f64::consts::LN_2, 0.0, 0.0]).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-15);
        assert!((s[1] - 0.25).abs() < 1e-15);
        // e^2 / (e^2 + 2 e^-1) evaluated independently of the max-shift path
        let e2 = 2.0f64.exp();
        let em1 = (-1.0f64).exp();
        let z = e2 + 2.0 * em1;
        let s = softmax_row(&[2.0, -1.0, -1.0]).unwrap();
        assert!((s[0] - e2 / z).abs() < 1e-14);
        assert!((s[1] - em1 / z).abs() < 1e-14);
        assert!((s[0] - 0.909443).abs() < 1e-6);
        assert!((s[1] - 0.045279).abs() < 1e-6);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax_row(&[0.0, f64::NAN]).is_err());
        assert!(softmax_row(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn softmax_survives_extreme_inputs() {
        let s = softmax_row(&[700.0, -700.0, 699.0]).unwrap();
        assert!(s.iter().all(|x| x.is_finite() && *x >= 0.0));
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_jacobian_annihilates_ones() {
        let s = softmax_row(&[0.3, -1.2, 2.0, 0.0]).unwrap();
        let mut out = [0.0; 4];
        softmax_vjp(&s, &[1.0; 4], &mut out);
        assert!(out.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn logistic_is_symmetric() {
        for x in [-30.0, -2.0, 0.0, 0.5, 40.0] {
            assert!((logistic(x) + logistic(-x) - 1.0).abs() < 1e-15);
        }
        assert_eq!(logistic(0.0), 0.5);
    }

    #[test]
    fn ln_factorial_small_values() {
        assert_eq!(ln_factorial(0.0), 0.0);
        assert_eq!(ln_factorial(1.0), 0.0);
        assert!((ln_factorial(2.0) - 2.0f64.ln()).abs() < 1e-15);
        assert!((ln_factorial(5.0) - 120.0f64.ln()).abs() < 1e-13);
    }
}
