//! Scalar special functions: softplus, logistic sigmoid, log-gamma and
//! digamma.

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use alloc::format;

/// `log(1 + exp(x))` without overflow for large `x`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, also the derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const LANCZOS_R: f64 = 10.900511;

const LANCZOS_DK: [f64; 11] = [
    2.48574089138753565546e-5,
    1.05142378581721974210,
    -3.45687097222016235469,
    4.51227709466894823700,
    -2.98285225323576655721,
    1.05639711577126713077,
    -1.95428773191645869583e-1,
    1.70970543404441224307e-2,
    -5.71926117404305781283e-4,
    4.63399473359905636708e-6,
    -2.71994908488607703910e-9,
];

// ln(2 * sqrt(e / pi))
const LN_TWO_SQRT_E_OVER_PI: f64 = 0.6207822376352452223455184457816472122518527279025978;
const LN_PI: f64 = 1.1447298858494001741434273513530587116472948129153;

fn lanczos_sum(x: f64) -> f64 {
    LANCZOS_DK
        .iter()
        .enumerate()
        .skip(1)
        .fold(LANCZOS_DK[0], |s, (i, &dk)| s + dk / (x + i as f64 - 1.0))
}

/// Natural log of the gamma function for `x > 0` (Lanczos approximation,
/// Pugh's 11-term coefficient set).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let s = LANCZOS_DK
            .iter()
            .enumerate()
            .skip(1)
            .fold(LANCZOS_DK[0], |s, (i, &dk)| s + dk / (i as f64 - x));
        LN_PI
            - (core::f64::consts::PI * x).sin().ln()
            - s.ln()
            - LN_TWO_SQRT_E_OVER_PI
            - (0.5 - x) * ((0.5 - x + LANCZOS_R) / core::f64::consts::E).ln()
    } else {
        lanczos_sum(x).ln()
            + LN_TWO_SQRT_E_OVER_PI
            + (x - 0.5) * ((x - 0.5 + LANCZOS_R) / core::f64::consts::E).ln()
    }
}

/// Digamma ψ(x) for `x > 0`: shift upward with ψ(x) = ψ(x+1) − 1/x until
/// `x ≥ 6`, then the asymptotic expansion.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number series up to x^-12.
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    acc + x.ln() - 0.5 * inv - series
}

/// Checked `(ln Γ(x), ψ(x))` pair.
pub fn lgamma_digamma(x: f64) -> Result<(f64, f64)> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("x = {x}"), "lgamma/digamma"));
    }
    Ok((ln_gamma(x), digamma(x)))
}
