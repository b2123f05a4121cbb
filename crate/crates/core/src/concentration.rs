//! Concentration bounds: Kato's inequality with closed-form optimized
//! coefficients, and the Serfling correction for sampling without
//! replacement.
//!
//! Kato's inequality relates a realized count `Lambda_N` of a Bernoulli
//! sequence to the sum of its conditional probabilities `S_N`, in either
//! direction, without any independence assumption. Each bound is a
//! one-parameter family `(a, b)`; the coefficients below minimize the
//! deviation term under the failure-probability constraint, evaluated at a
//! preliminary guess of the unknown quantity. A wrong guess only loosens
//! the bound, never invalidates it. The reverse bounds additionally clamp
//! `a` so the bound is monotone in its argument, which lets one-sided
//! inputs be plugged in safely.

use crate::error::{Error, Result};

/// A coefficient pair for Kato's inequality. Valid pairs satisfy
/// `b > |a|`.
#[derive(Clone, Copy, Debug)]
pub struct KatoCoeffs {
    pub a: f64,
    pub b: f64,
}

/// `b` solving the failure-probability equality for a given `a`.
/// `sign = +1` corresponds to the `(1 + 4a / 3 sqrt(N))` variant of the
/// inequality, `sign = -1` to the mirrored one.
fn b_from_a(n: f64, a: f64, ln_eps: f64, sign: f64) -> f64 {
    (18.0 * n * a * a - (16.0 * a * a + sign * 24.0 * n.sqrt() * a + 9.0 * n) * ln_eps).sqrt()
        / (3.0 * (2.0 * n).sqrt())
}

fn check_common(n: f64, value: f64, guess: f64, eps: f64) -> Result<f64> {
    if !(n > 0.0) {
        return Err(Error::Domain(format!("N must be positive, got {n}")));
    }
    if !(0.0..=n).contains(&value) {
        return Err(Error::Domain(format!("count {value} outside [0, N = {n}]")));
    }
    if !(0.0..=n).contains(&guess) {
        return Err(Error::Domain(format!("guess {guess} outside [0, N = {n}]")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps must lie in (0, 1), got {eps}")));
    }
    Ok(eps.ln())
}

impl KatoCoeffs {
    /// Coefficients minimizing the direct lower-bound deviation at guess
    /// `guess`.
    pub fn direct_lower(n: f64, guess: f64, ln_eps: f64) -> Self {
        let rn = n.sqrt();
        let inner = -ln_eps * (9.0 * guess * (n - guess) - 2.0 * n * ln_eps);
        let a = 3.0
            * (9.0 * 2.0f64.sqrt() * n * (n - 2.0 * guess) * inner.sqrt()
                + 16.0 * n * rn * ln_eps * ln_eps
                - 72.0 * guess * rn * (n - guess) * ln_eps)
            / (4.0 * (9.0 * n - 8.0 * ln_eps) * (9.0 * guess * (n - guess) - 2.0 * n * ln_eps));
        let b = b_from_a(n, a, ln_eps, -1.0);
        Self { a, b }
    }

    /// Coefficients minimizing the direct upper-bound deviation.
    pub fn direct_upper(n: f64, guess: f64, ln_eps: f64) -> Self {
        let rn = n.sqrt();
        let inner = -ln_eps * (9.0 * guess * (n - guess) - 2.0 * n * ln_eps);
        let a = 3.0
            * (9.0 * 2.0f64.sqrt() * n * (n - 2.0 * guess) * inner.sqrt()
                - 16.0 * n * rn * ln_eps * ln_eps
                + 72.0 * guess * rn * (n - guess) * ln_eps)
            / (4.0 * (9.0 * n - 8.0 * ln_eps) * (9.0 * guess * (n - guess) - 2.0 * n * ln_eps));
        let b = b_from_a(n, a, ln_eps, 1.0);
        Self { a, b }
    }

    /// Coefficients optimizing the reverse lower bound, with the monotone
    /// clamp `a >= -sqrt(N)/2` already applied (and `b` re-solved).
    pub fn reverse_lower(n: f64, guess: f64, ln_eps: f64) -> Self {
        let rn = n.sqrt();
        let inner = n * ln_eps * (n * ln_eps - 18.0 * guess * (n - guess));
        let denom = 4.0
            * (4.0 * n * ln_eps * ln_eps
                + 36.0 * (2.0 * guess * guess - 2.0 * n * guess + n * n) * ln_eps
                + 81.0 * n * guess * (n - guess));
        let a_raw = 3.0
            * rn
            * (9.0 * (n - 2.0 * guess) * inner.sqrt()
                - 4.0 * n * ln_eps * ln_eps
                - 9.0 * (8.0 * guess * guess - 8.0 * n * guess + 3.0 * n * n) * ln_eps)
            / denom;
        let a = a_raw.max(-rn / 2.0);
        let b = b_from_a(n, a, ln_eps, 1.0);
        Self { a, b }
    }

    /// Coefficients optimizing the reverse upper bound, with the monotone
    /// clamp `a <= sqrt(N)/2` already applied.
    pub fn reverse_upper(n: f64, guess: f64, ln_eps: f64) -> Self {
        let rn = n.sqrt();
        let inner = n * ln_eps * (n * ln_eps + 18.0 * guess * (guess - n));
        let denom = 4.0
            * (4.0 * n * ln_eps * ln_eps
                + 36.0 * (2.0 * guess * guess - 2.0 * n * guess + n * n) * ln_eps
                + 81.0 * n * guess * (n - guess));
        let a_raw = 3.0
            * rn
            * (9.0 * (n - 2.0 * guess) * inner.sqrt()
                + 4.0 * n * ln_eps * ln_eps
                + 9.0 * (8.0 * guess * guess - 8.0 * n * guess + 3.0 * n * n) * ln_eps)
            / denom;
        let a = a_raw.min(rn / 2.0);
        let b = b_from_a(n, a, ln_eps, -1.0);
        Self { a, b }
    }
}

/// Lower bound on the conditional-probability sum given the realized count
/// `lam`: with probability at least `1 - eps`, the sum exceeds the
/// returned value.
pub fn kato_direct_lower(n: f64, lam: f64, guess: f64, eps: f64) -> Result<f64> {
    let ln_eps = check_common(n, lam, guess, eps)?;
    let KatoCoeffs { a, b } = KatoCoeffs::direct_lower(n, guess, ln_eps);
    Ok(lam - (b + a * (2.0 * lam / n - 1.0)) * n.sqrt())
}

/// Upper bound on the conditional-probability sum given the realized
/// count.
pub fn kato_direct_upper(n: f64, lam: f64, guess: f64, eps: f64) -> Result<f64> {
    let ln_eps = check_common(n, lam, guess, eps)?;
    let KatoCoeffs { a, b } = KatoCoeffs::direct_upper(n, guess, ln_eps);
    Ok(lam + (b + a * (2.0 * lam / n - 1.0)) * n.sqrt())
}

/// Lower bound on the realized count given (a lower bound on) the
/// conditional-probability sum `s`. Non-decreasing in `s` by construction.
pub fn kato_reverse_lower(n: f64, s: f64, guess: f64, eps: f64) -> Result<f64> {
    let ln_eps = check_common(n, s, guess, eps)?;
    let KatoCoeffs { a, b } = KatoCoeffs::reverse_lower(n, guess, ln_eps);
    let rn = n.sqrt();
    Ok((rn * s + n * (a - b)) / (2.0 * a + rn))
}

/// Upper bound on the realized count given (an upper bound on) the
/// conditional-probability sum `s`. Non-decreasing in `s` by construction.
pub fn kato_reverse_upper(n: f64, s: f64, guess: f64, eps: f64) -> Result<f64> {
    let ln_eps = check_common(n, s, guess, eps)?;
    let KatoCoeffs { a, b } = KatoCoeffs::reverse_upper(n, guess, ln_eps);
    let rn = n.sqrt();
    Ok((rn * s - n * (a - b)) / (rn - 2.0 * a))
}

/// Serfling-style correction for estimating one population fraction from
/// another when sampling without replacement:
/// `Upsilon(x, y, z) = sqrt((x + y) x (y + 1) ln(1/z) / (2 y^2))`.
pub fn serfling_upsilon(x: f64, y: f64, z: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("x must be >= 0, got {x}")));
    }
    if !(y >= 1.0) {
        return Err(Error::Domain(format!(
            "y must be >= 1 (empty test sample otherwise), got {y}"
        )));
    }
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::Domain(format!("z must lie in (0, 1), got {z}")));
    }
    Ok(((x + y) * x * (y + 1.0) * (1.0 / z).ln() / (2.0 * y * y)).sqrt())
}
