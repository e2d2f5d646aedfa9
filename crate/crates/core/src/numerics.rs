//! Special functions and small numeric kernels used by every loss.
//!
//! Digamma, trigamma and log-gamma all shift the argument upward with the
//! usual recurrences until it reaches [`SHIFT_THRESHOLD`], then evaluate a
//! truncated asymptotic (Stirling-type) series. On `[1e-3, 50]` the f64
//! results are within 1e-10 of a 50-digit reference.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Arguments below this are shifted with the recurrence before the series.
pub const SHIFT_THRESHOLD: f64 = 6.0;

/// B_{2k} / 2k for k = 1..7, the digamma asymptotic coefficients.
const DIGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// B_{2k} for k = 1..7, the trigamma asymptotic coefficients.
const TRIGAMMA_SERIES: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

/// B_{2k} / (2k (2k-1)) for k = 1..7, the Stirling series coefficients.
const STIRLING_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
];

fn check_positive<T: Real>(what: &'static str, x: T) -> Result<()> {
    if !x.is_finite() || x <= T::zero() {
        return Err(Error::domain(what, x.as_f64(), "finite x > 0"));
    }
    Ok(())
}

/// Digamma ψ(x) = d/dx ln Γ(x) for finite `x > 0`.
pub fn digamma<T: Real>(x: T) -> Result<T> {
    check_positive("digamma", x)?;
    let one = T::one();
    let threshold = T::lit(SHIFT_THRESHOLD);
    let mut acc = T::zero();
    let mut xx = x;
    while xx < threshold {
        acc = acc - one / xx;
        xx = xx + one;
    }
    let inv2 = one / (xx * xx);
    let mut series = T::zero();
    let mut pow = inv2;
    for &c in &DIGAMMA_SERIES {
        series = series + T::lit(c) * pow;
        pow = pow * inv2;
    }
    Ok(acc + xx.ln() - T::lit(0.5) / xx - series)
}

/// Trigamma ψ₁(x) = d²/dx² ln Γ(x) for finite `x > 0`.
pub fn trigamma<T: Real>(x: T) -> Result<T> {
    check_positive("trigamma", x)?;
    let one = T::one();
    let threshold = T::lit(SHIFT_THRESHOLD);
    let mut acc = T::zero();
    let mut xx = x;
    while xx < threshold {
        acc = acc + one / (xx * xx);
        xx = xx + one;
    }
    let inv = one / xx;
    let inv2 = inv * inv;
    // 1/x + 1/(2x^2) + sum B_2k / x^(2k+1)
    let mut series = T::zero();
    let mut pow = inv2 * inv;
    for &c in &TRIGAMMA_SERIES {
        series = series + T::lit(c) * pow;
        pow = pow * inv2;
    }
    Ok(acc + inv + T::lit(0.5) * inv2 + series)
}

/// Natural log of Γ(x) for finite `x > 0`.
pub fn log_gamma<T: Real>(x: T) -> Result<T> {
    check_positive("log_gamma", x)?;
    let one = T::one();
    let threshold = T::lit(SHIFT_THRESHOLD);
    // ln Γ(x) = ln Γ(x + n) - ln(x (x+1) ... (x+n-1))
    let mut prod = one;
    let mut xx = x;
    while xx < threshold {
        prod = prod * xx;
        xx = xx + one;
    }
    let inv = one / xx;
    let inv2 = inv * inv;
    let mut series = T::zero();
    let mut pow = inv;
    for &c in &STIRLING_SERIES {
        series = series + T::lit(c) * pow;
        pow = pow * inv2;
    }
    let half_ln_two_pi = T::lit(0.5) * (T::lit(2.0) * T::PI()).ln();
    Ok((xx - T::lit(0.5)) * xx.ln() - xx + half_ln_two_pi + series - prod.ln())
}

/// ln(1 + eˣ), evaluated without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::lit(30.0) {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, stable for large |x|. Also the derivative of softplus.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Log-softmax with the max subtracted first.
pub fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let sum = logits.iter().fold(T::zero(), |acc, &z| acc + (z - max).exp());
    let lse = max + sum.ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    log_softmax(logits).into_iter().map(|l| l.exp()).collect()
}

fn check_distribution<T: Real>(name: &'static str, p: &[T]) -> Result<()> {
    let mut sum = T::zero();
    for &v in p {
        if !v.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        if v < T::zero() {
            return Err(Error::InvalidInput(format!("{name} has a negative entry {v}")));
        }
        sum = sum + v;
    }
    if (sum - T::one()).abs().as_f64() > 1e-9 {
        return Err(Error::InvalidInput(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

/// Jensen-Shannon divergence in nats, so the result lies in `[0, ln 2]`.
pub fn js_divergence<T: Real>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    check_distribution("p", p)?;
    check_distribution("q", q)?;
    let half = T::lit(0.5);
    let mut js = T::zero();
    for (&a, &b) in p.iter().zip(q) {
        let m = half * (a + b);
        if a > T::zero() {
            js = js + half * a * (a / m).ln();
        }
        if b > T::zero() {
            js = js + half * b * (b / m).ln();
        }
    }
    Ok(js.max(T::zero()).min(T::LN_2()))
}

/// Central-difference gradient of `f` at `theta` with step `h`.
pub fn finite_diff_grad<T, F>(mut f: F, theta: &[T], h: T) -> Result<Vec<T>>
where
    T: Real,
    F: FnMut(&[T]) -> T,
{
    if !h.is_finite() || h <= T::zero() {
        return Err(Error::domain("finite_diff_grad step", h.as_f64(), "finite h > 0"));
    }
    let mut probe = theta.to_vec();
    let two_h = h + h;
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("objective evaluation around coordinate {i}")));
        }
        grad.push((plus - minus) / two_h);
    }
    Ok(grad)
}

/// Norm-wise relative error ‖a − b‖ / max(‖a‖ + ‖b‖, 1e-12).
///
/// Used by every gradient check; zero when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error on unequal lengths");
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}
