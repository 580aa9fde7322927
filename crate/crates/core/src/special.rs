//! Special functions needed by the variational updates.

use crate::error::{Error, Result};

/// Coefficients B_{2k} / (2k) of the digamma asymptotic series, k = 1..7.
const DIGAMMA_ASYMPTOTIC: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Digamma function Ψ(x) = d/dx ln Γ(x) for x > 0.
///
/// Shifts x upward with Ψ(x) = Ψ(x + 1) − 1/x until x ≥ 10, then applies the
/// asymptotic expansion ln x − 1/(2x) − Σ B_{2k} / (2k x^{2k}).
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("digamma requires x > 0, got {x}")));
    }
    Ok(digamma_unchecked(x))
}

/// Digamma without the domain check. Callers guarantee x > 0.
#[inline]
pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    let mut power = inv2;
    for c in DIGAMMA_ASYMPTOTIC {
        series += c * power;
        power *= inv2;
    }
    shift + x.ln() - 0.5 / x - series
}

/// Natural log of the gamma function for x > 0.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("ln_gamma requires x > 0, got {x}")));
    }
    Ok(ln_gamma_unchecked(x))
}

#[inline]
pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x) Γ(1 − x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma_unchecked(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// ln(x!) through ln Γ(x + 1).
#[inline]
pub fn ln_factorial(x: u64) -> f64 {
    if x < 2 {
        0.0
    } else {
        ln_gamma_unchecked(x as f64 + 1.0)
    }
}

/// log Σ exp(v), returning −∞ for an empty slice or all −∞ inputs.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights in place into probabilities, using max-subtraction.
/// Returns the log normalizer.
pub(crate) fn normalize_log_weights(weights: &mut [f64]) -> Result<f64> {
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite(format!(
            "log-weights have no finite maximum ({max})"
        )));
    }
    let mut total = 0.0;
    for w in weights.iter_mut() {
        if w.is_nan() {
            return Err(Error::NonFinite("NaN log-weight".into()));
        }
        *w = (*w - max).exp();
        total += *w;
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(max + total.ln())
}
