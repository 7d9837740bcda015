//! Noise models: Gaussian for real-valued targets and negative binomial
//! (mean/shape parameterization, `Var[z] = μ + μ²α`) for counts.
//!
//! Each model provides its negative log-likelihood with analytic gradients
//! with respect to its parameters, the mapping from network output to
//! parameters (including the per-series scale `ν`), and a sampler.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::special::{digamma, ln_gamma, sigmoid, softplus};

/// Lower bound applied to softplus outputs (σ, α, and the negative binomial
/// mean) before scaling by `ν`.
pub const PARAM_FLOOR: f64 = 1e-6;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Integer counts below this use exact log/reciprocal sums for the
/// Γ-ratio terms instead of differencing `ln Γ`.
const SMALL_COUNT: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LikelihoodKind {
    Gaussian,
    NegativeBinomial,
}

impl LikelihoodKind {
    pub fn name(self) -> &'static str {
        match self {
            LikelihoodKind::Gaussian => "gaussian",
            LikelihoodKind::NegativeBinomial => "negbin",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "gaussian" | "normal" => Some(LikelihoodKind::Gaussian),
            "negbin" | "negative_binomial" | "negative-binomial" => {
                Some(LikelihoodKind::NegativeBinomial)
            }
            _ => None,
        }
    }

    /// Whether `z` is in the support of this model.
    pub fn supports(self, z: f64) -> bool {
        match self {
            LikelihoodKind::Gaussian => z.is_finite(),
            LikelihoodKind::NegativeBinomial => z >= 0.0 && z.is_finite() && z.fract() == 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LikelihoodParams {
    Gaussian { mu: f64, sigma: f64 },
    NegativeBinomial { mu: f64, alpha: f64 },
}

impl LikelihoodParams {
    pub fn kind(&self) -> LikelihoodKind {
        match self {
            LikelihoodParams::Gaussian { .. } => LikelihoodKind::Gaussian,
            LikelihoodParams::NegativeBinomial { .. } => LikelihoodKind::NegativeBinomial,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            LikelihoodParams::Gaussian { mu, .. } | LikelihoodParams::NegativeBinomial { mu, .. } => mu,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            LikelihoodParams::Gaussian { sigma, .. } => sigma * sigma,
            LikelihoodParams::NegativeBinomial { mu, alpha } => mu + mu * mu * alpha,
        }
    }

    /// Second parameter: σ or α.
    pub fn shape(&self) -> f64 {
        match *self {
            LikelihoodParams::Gaussian { sigma, .. } => sigma,
            LikelihoodParams::NegativeBinomial { alpha, .. } => alpha,
        }
    }

    pub fn nll(&self, z: f64) -> Result<Nll> {
        match *self {
            LikelihoodParams::Gaussian { mu, sigma } => gaussian_nll(z, mu, sigma),
            LikelihoodParams::NegativeBinomial { mu, alpha } => negbin_nll(z, mu, alpha),
        }
    }
}

/// Negative log-likelihood and its partial derivatives with respect to the
/// mean and the shape parameter (σ or α).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nll {
    pub value: f64,
    pub d_mu: f64,
    pub d_shape: f64,
}

pub fn gaussian_nll(z: f64, mu: f64, sigma: f64) -> Result<Nll> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("sigma = {sigma}"), "gaussian likelihood"));
    }
    let r = z - mu;
    let inv_var = 1.0 / (sigma * sigma);
    Ok(Nll {
        value: HALF_LN_TWO_PI + sigma.ln() + 0.5 * r * r * inv_var,
        d_mu: -r * inv_var,
        d_shape: 1.0 / sigma - r * r * inv_var / sigma,
    })
}

fn check_negbin(z: f64, mu: f64, alpha: f64) -> Result<()> {
    if !LikelihoodKind::NegativeBinomial.supports(z) {
        return Err(Error::Domain(format!("z = {z}"), "negative binomial likelihood"));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::Domain(format!("mu = {mu}"), "negative binomial likelihood"));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("alpha = {alpha}"), "negative binomial likelihood"));
    }
    Ok(())
}

/// `(ln Γ(z + r) − ln Γ(r), ψ(z + r) − ψ(r))` for integer `z ≥ 0`.
fn gamma_ratio_terms(z: f64, r: f64) -> (f64, f64) {
    if z < SMALL_COUNT {
        let mut log_sum = 0.0;
        let mut inv_sum = 0.0;
        let mut k = 0.0;
        while k < z {
            log_sum += (r + k).ln();
            inv_sum += 1.0 / (r + k);
            k += 1.0;
        }
        (log_sum, inv_sum)
    } else {
        (ln_gamma(z + r) - ln_gamma(r), digamma(z + r) - digamma(r))
    }
}

fn ln_factorial(z: f64) -> f64 {
    if z < SMALL_COUNT {
        let mut acc = 0.0;
        let mut k = 2.0;
        while k <= z {
            acc += k.ln();
            k += 1.0;
        }
        acc
    } else {
        ln_gamma(z + 1.0)
    }
}

/// Log probability mass of the negative binomial with mean `mu` and shape
/// `alpha`.
pub fn negbin_log_pmf(z: f64, mu: f64, alpha: f64) -> Result<f64> {
    check_negbin(z, mu, alpha)?;
    let r = 1.0 / alpha;
    let am = alpha * mu;
    let (lg_ratio, _) = gamma_ratio_terms(z, r);
    let log_p = lg_ratio - ln_factorial(z) - r * am.ln_1p()
        + if z > 0.0 { z * (am.ln() - am.ln_1p()) } else { 0.0 };
    Ok(log_p)
}

/// Negative binomial NLL with
/// `∂/∂μ = (μ − z) / (μ(1 + αμ))` and
/// `∂/∂α = −[r(z − μ)/(1 + αμ) + r²(ln(1 + αμ) − (ψ(z + r) − ψ(r)))]`, `r = 1/α`.
pub fn negbin_nll(z: f64, mu: f64, alpha: f64) -> Result<Nll> {
    check_negbin(z, mu, alpha)?;
    let r = 1.0 / alpha;
    let am = alpha * mu;
    let log1p_am = am.ln_1p();
    let (lg_ratio, dg_ratio) = gamma_ratio_terms(z, r);
    let log_p = lg_ratio - ln_factorial(z) - r * log1p_am
        + if z > 0.0 { z * (am.ln() - log1p_am) } else { 0.0 };
    let d_mu = (mu - z) / (mu * (1.0 + am));
    let d_alpha = -(r * (z - mu) / (1.0 + am) + r * r * (log1p_am - dg_ratio));
    Ok(Nll {
        value: -log_p,
        d_mu,
        d_shape: d_alpha,
    })
}

/// Affine maps from the network output to the two pre-activations
/// `o_μ` (row 0) and `o_σ` / `o_α` (row 1).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `2 × H`
    pub weights: Matrix,
    /// `[b_μ, b_shape]`
    pub bias: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(input_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(2, input_dim),
            bias: alloc::vec![0.0; 2],
        }
    }

    pub fn init<R: Rng + ?Sized>(input_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input_dim.max(1) as f64).sqrt();
        Self {
            weights: Matrix::uniform(2, input_dim, bound, rng),
            bias: alloc::vec![0.0; 2],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self, h: &[f64]) -> HeadOutput {
        HeadOutput {
            o_mu: dot(self.weights.row(0), h) + self.bias[0],
            o_shape: dot(self.weights.row(1), h) + self.bias[1],
        }
    }
}

/// Raw affine outputs before the positivity transform and scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutput {
    pub o_mu: f64,
    pub o_shape: f64,
}

fn floored_softplus(x: f64) -> (f64, f64) {
    let s = softplus(x);
    if s > PARAM_FLOOR {
        (s, sigmoid(x))
    } else {
        (PARAM_FLOOR, 0.0)
    }
}

/// Likelihood parameters from head outputs and scale `ν`, together with
/// `(∂μ/∂o_μ, ∂shape/∂o_shape)`.
pub fn params_from_output(out: HeadOutput, nu: f64, kind: LikelihoodKind) -> (LikelihoodParams, [f64; 2]) {
    match kind {
        LikelihoodKind::Gaussian => {
            let (s, ds) = floored_softplus(out.o_shape);
            (
                LikelihoodParams::Gaussian {
                    mu: nu * out.o_mu,
                    sigma: nu * s,
                },
                [nu, nu * ds],
            )
        }
        LikelihoodKind::NegativeBinomial => {
            let (m, dm) = floored_softplus(out.o_mu);
            let (a, da) = floored_softplus(out.o_shape);
            let inv_sqrt_nu = 1.0 / nu.sqrt();
            (
                LikelihoodParams::NegativeBinomial {
                    mu: nu * m,
                    alpha: a * inv_sqrt_nu,
                },
                [nu * dm, da * inv_sqrt_nu],
            )
        }
    }
}

/// Map a network output vector `h` to likelihood parameters under scale `ν`.
pub fn apply_heads(h: &[f64], heads: &HeadParams, nu: f64, kind: LikelihoodKind) -> Result<LikelihoodParams> {
    if h.len() != heads.input_dim() {
        return Err(Error::Shape {
            what: "head input",
            expected: heads.input_dim(),
            got: h.len(),
        });
    }
    Ok(params_from_output(heads.outputs(h), nu, kind).0)
}

/// Backward through the heads: given `∂L/∂μ` and `∂L/∂shape` at one step,
/// accumulate into `d_heads` and `d_h`.
pub fn heads_backward(
    h: &[f64],
    heads: &HeadParams,
    chain: [f64; 2],
    d_mu: f64,
    d_shape: f64,
    d_heads: &mut HeadParams,
    d_h: &mut [f64],
) {
    let d_o = [d_mu * chain[0], d_shape * chain[1]];
    for (row, &g) in d_o.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        crate::linalg::axpy(g, h, d_heads.weights.row_mut(row));
        d_heads.bias[row] += g;
        crate::linalg::axpy(g, heads.weights.row(row), d_h);
    }
}

/// Standard normal draw via Box–Muller.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 1 - U lies in (0, 1], keeping the log finite
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos()
}

/// Gamma(shape, scale) by Marsaglia–Tsang; shapes below one are boosted
/// to `shape + 1` and corrected by `U^(1/shape)`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u = 1.0 - rng.random::<f64>();
        return sample_gamma(shape + 1.0, scale, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (x, v) = loop {
            let x = standard_normal(rng);
            let v = 1.0 + c * x;
            if v > 0.0 {
                break (x, v * v * v);
            }
        };
        let u = rng.random::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v * scale;
        }
    }
}

/// Poisson(λ): sequential inversion for λ < 10, PTRS transformed rejection
/// otherwise.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> f64 {
    if !(lambda > 0.0) {
        return 0.0;
    }
    if lambda < 10.0 {
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let u = rng.random::<f64>();
        let mut k = 0.0;
        while u > cdf && k < 1000.0 {
            k += 1.0;
            p *= lambda / k;
            cdf += p;
        }
        return k;
    }
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v = rng.random::<f64>();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln() <= -lambda + k * loglam - ln_gamma(k + 1.0) {
            return k;
        }
    }
}

/// One draw from `ℓ(·|θ)`. Negative binomial draws use the Gamma–Poisson
/// mixture `λ ~ Gamma(1/α, αμ)`, `z ~ Poisson(λ)`.
pub fn sample<R: Rng + ?Sized>(params: &LikelihoodParams, rng: &mut R) -> f64 {
    match *params {
        LikelihoodParams::Gaussian { mu, sigma } => mu + sigma * standard_normal(rng),
        LikelihoodParams::NegativeBinomial { mu, alpha } => {
            let lambda = sample_gamma(1.0 / alpha, alpha * mu, rng);
            sample_poisson(lambda, rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use alloc::vec;
    use alloc::vec::Vec;

    /// Five-point stencil; with a relative step of 1e-3 its truncation error
    /// is far below the cancellation noise of a 1e-6 central difference on
    /// the lgamma route.
    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-3 * x.abs().max(1e-2);
        (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
    }

    fn rel(a: f64, n: f64) -> f64 {
        crate::gradcheck::relative_error(a, n)
    }

    #[test]
    fn gaussian_reference_values() {
        let n = gaussian_nll(0.0, 0.0, 1.0).unwrap();
        assert!((n.value - 0.918_938_533_2).abs() < 1e-10);
        let n = gaussian_nll(0.0, 1.0, 1.0).unwrap();
        assert!((n.value - 1.418_938_533_2).abs() < 1e-10);
        assert_eq!(n.d_mu, 1.0);
        assert!(gaussian_nll(0.0, 0.0, 0.0).is_err());
        assert!(gaussian_nll(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn negbin_reference_values() {
        let n = negbin_nll(0.0, 1.0, 1.0).unwrap();
        assert!((n.value - core::f64::consts::LN_2).abs() < 1e-12);
        let n = negbin_nll(1.0, 1.0, 1.0).unwrap();
        assert!((n.value - 4f64.ln()).abs() < 1e-12);
        // Poisson limit: 2² e⁻² / 2! = 0.270670566...
        let p = negbin_log_pmf(2.0, 2.0, 1e-8).unwrap().exp();
        assert!((p - 0.270_670_566_473_225_4).abs() < 1e-5);
    }

    #[test]
    fn negbin_domain_errors() {
        assert!(negbin_nll(1.5, 1.0, 1.0).is_err());
        assert!(negbin_nll(-1.0, 1.0, 1.0).is_err());
        assert!(negbin_nll(1.0, 0.0, 1.0).is_err());
        assert!(negbin_nll(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn negbin_large_counts_agree_with_lgamma_route() {
        // z = 63 uses the summation route, 64 the lgamma route; both must be
        // continuous in z.
        let direct = |z: f64, mu: f64, a: f64| {
            let r = 1.0 / a;
            ln_gamma(z + r) - ln_gamma(z + 1.0) - ln_gamma(r) + r * (1.0 / (1.0 + a * mu)).ln()
                + z * (a * mu / (1.0 + a * mu)).ln()
        };
        for &z in &[0.0, 1.0, 7.0, 63.0, 64.0, 300.0] {
            let ours = negbin_log_pmf(z, 40.0, 0.3).unwrap();
            assert!((ours - direct(z, 40.0, 0.3)).abs() < 1e-9, "z={z}");
        }
    }

    #[test]
    fn negbin_mass_sums_to_one() {
        for &mu in &[0.5, 2.0, 10.0] {
            for &alpha in &[0.1, 1.0] {
                let total: f64 = (0..=500)
                    .map(|z| negbin_log_pmf(z as f64, mu, alpha).unwrap().exp())
                    .sum();
                assert!((total - 1.0).abs() < 1e-8, "mu={mu} alpha={alpha} total={total}");
            }
        }
    }

    #[test]
    fn gaussian_gradients_match_finite_differences() {
        let mut rng = substream(1, Stream::Sampling, 0);
        for _ in 0..20 {
            let z = rng.random::<f64>() * 10.0 - 5.0;
            let mu = rng.random::<f64>() * 10.0 - 5.0;
            let sigma = rng.random::<f64>() * 3.0 + 0.1;
            let g = gaussian_nll(z, mu, sigma).unwrap();
            let n_mu = fd(|m| gaussian_nll(z, m, sigma).unwrap().value, mu);
            let n_s = fd(|s| gaussian_nll(z, mu, s).unwrap().value, sigma);
            assert!(rel(g.d_mu, n_mu) < 1e-7, "{} vs {}", g.d_mu, n_mu);
            assert!(rel(g.d_shape, n_s) < 1e-7, "{} vs {}", g.d_shape, n_s);
        }
    }

    #[test]
    fn negbin_gradients_match_finite_differences() {
        let mut rng = substream(2, Stream::Sampling, 0);
        for i in 0..40 {
            let z = if i % 2 == 0 {
                rng.random_range(0..20) as f64
            } else {
                rng.random_range(60..200) as f64
            };
            let mu = rng.random::<f64>() * 50.0 + 0.2;
            let alpha = rng.random::<f64>() * 2.0 + 0.02;
            let g = negbin_nll(z, mu, alpha).unwrap();
            let n_mu = fd(|m| negbin_nll(z, m, alpha).unwrap().value, mu);
            let n_a = fd(|a| negbin_nll(z, mu, a).unwrap().value, alpha);
            assert!(rel(g.d_mu, n_mu) < 1e-6, "z={z} mu={mu} a={alpha}: {} vs {}", g.d_mu, n_mu);
            assert!(rel(g.d_shape, n_a) < 1e-6, "z={z} mu={mu} a={alpha}: {} vs {}", g.d_shape, n_a);
        }
    }

    #[test]
    fn heads_apply_scale_rules() {
        let heads = HeadParams::zeros(3);
        let h = [0.0; 3];
        match apply_heads(&h, &heads, 1.0, LikelihoodKind::NegativeBinomial).unwrap() {
            LikelihoodParams::NegativeBinomial { mu, alpha } => {
                assert_eq!(mu, core::f64::consts::LN_2);
                assert_eq!(alpha, core::f64::consts::LN_2);
            }
            _ => unreachable!(),
        }
        match apply_heads(&h, &heads, 4.0, LikelihoodKind::NegativeBinomial).unwrap() {
            LikelihoodParams::NegativeBinomial { mu, alpha } => {
                assert!((mu - 4.0 * core::f64::consts::LN_2).abs() < 1e-15);
                assert!((alpha - core::f64::consts::LN_2 / 2.0).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
        assert_eq!(
            apply_heads(&h, &heads, 1.0, LikelihoodKind::Gaussian).unwrap(),
            LikelihoodParams::Gaussian {
                mu: 0.0,
                sigma: core::f64::consts::LN_2
            }
        );
        assert!(apply_heads(&[0.0; 2], &heads, 1.0, LikelihoodKind::Gaussian).is_err());
    }

    #[test]
    fn floors_keep_parameters_in_domain() {
        let mut heads = HeadParams::zeros(1);
        heads.bias = vec![-1e4, -1e4];
        for kind in [LikelihoodKind::Gaussian, LikelihoodKind::NegativeBinomial] {
            let p = apply_heads(&[0.0], &heads, 1.0, kind).unwrap();
            assert!(p.shape() >= PARAM_FLOOR);
            assert!(p.nll(0.0).unwrap().value.is_finite());
        }
    }

    #[test]
    fn degenerate_gaussian_sample_is_the_mean() {
        let mut rng = substream(5, Stream::Paths, 0);
        let p = LikelihoodParams::Gaussian { mu: 3.25, sigma: 1e-12 };
        for _ in 0..100 {
            assert!((sample(&p, &mut rng) - 3.25).abs() < 1e-9);
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let p = LikelihoodParams::NegativeBinomial { mu: 5.0, alpha: 0.5 };
        let a: Vec<f64> = {
            let mut rng = substream(42, Stream::Paths, 0);
            (0..50).map(|_| sample(&p, &mut rng)).collect()
        };
        let b: Vec<f64> = {
            let mut rng = substream(42, Stream::Paths, 0);
            (0..50).map(|_| sample(&p, &mut rng)).collect()
        };
        assert_eq!(a, b);
        assert!(a.iter().all(|z| *z >= 0.0 && z.fract() == 0.0));
    }

    fn moments(draws: &[f64]) -> (f64, f64, f64, f64) {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let m2 = draws.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n;
        let m4 = draws.iter().map(|z| (z - mean).powi(4)).sum::<f64>() / n;
        // standard errors of the mean and of the sample variance
        (mean, m2, (m2 / n).sqrt(), ((m4 - m2 * m2) / n).sqrt())
    }

    #[test]
    fn negbin_sampler_moments() {
        let p = LikelihoodParams::NegativeBinomial { mu: 5.0, alpha: 0.5 };
        let mut rng = substream(8, Stream::Paths, 0);
        let draws: Vec<f64> = (0..1_000_000).map(|_| sample(&p, &mut rng)).collect();
        let (mean, var, se_mean, se_var) = moments(&draws);
        assert!((mean - 5.0).abs() < 3.0 * se_mean, "mean {mean} ± {se_mean}");
        assert!((var - 17.5).abs() < 3.0 * se_var, "var {var} ± {se_var}");
    }

    #[test]
    fn poisson_sampler_both_branches() {
        for &lambda in &[0.3f64, 4.0, 9.99, 10.0, 57.0, 1500.0] {
            let mut rng = substream(9, Stream::Paths, lambda.to_bits());
            let draws: Vec<f64> = (0..200_000).map(|_| sample_poisson(lambda, &mut rng)).collect();
            let (mean, var, se_mean, se_var) = moments(&draws);
            assert!((mean - lambda).abs() < 4.0 * se_mean, "λ={lambda} mean {mean}");
            assert!((var - lambda).abs() < 4.0 * se_var, "λ={lambda} var {var}");
        }
    }

    #[test]
    fn gamma_sampler_moments() {
        for &(shape, scale) in &[(0.3, 2.0), (1.0, 1.0), (7.5, 0.2)] {
            let mut rng = substream(10, Stream::Paths, 0);
            let draws: Vec<f64> = (0..200_000).map(|_| sample_gamma(shape, scale, &mut rng)).collect();
            let (mean, var, se_mean, se_var) = moments(&draws);
            assert!((mean - shape * scale).abs() < 4.0 * se_mean);
            assert!((var - shape * scale * scale).abs() < 4.0 * se_var);
        }
    }

    #[test]
    fn gaussian_sampler_ks() {
        let n = 100_000;
        let mut rng = substream(12, Stream::Paths, 0);
        let mut draws: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        draws.sort_by(f64::total_cmp);
        let cdf = |x: f64| statrs::function::erf::erfc(-x / core::f64::consts::SQRT_2) / 2.0;
        let d = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value 1.63/√n
        assert!(d < 1.63 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn negbin_sampler_pmf_buckets() {
        let (mu, alpha) = (3.0, 0.5);
        let p = LikelihoodParams::NegativeBinomial { mu, alpha };
        let n = 200_000usize;
        let mut rng = substream(13, Stream::Paths, 0);
        let mut counts = vec![0usize; 16];
        for _ in 0..n {
            let z = sample(&p, &mut rng) as usize;
            counts[z.min(15)] += 1;
        }
        for z in 0..15 {
            let pz = negbin_log_pmf(z as f64, mu, alpha).unwrap().exp();
            let freq = counts[z] as f64 / n as f64;
            let se = (pz * (1.0 - pz) / n as f64).sqrt();
            assert!((freq - pz).abs() < 3.5 * se, "z={z} freq={freq} p={pz}");
        }
    }

    proptest::proptest! {
        #[test]
        fn heads_stay_in_domain(o_mu in -50f64..50.0, o_s in -50f64..50.0, nu in 1f64..1e4) {
            for kind in [LikelihoodKind::Gaussian, LikelihoodKind::NegativeBinomial] {
                let (p, _) = params_from_output(HeadOutput { o_mu, o_shape: o_s }, nu, kind);
                proptest::prop_assert!(p.shape() > 0.0);
                if kind == LikelihoodKind::NegativeBinomial {
                    proptest::prop_assert!(p.mean() > 0.0);
                }
            }
        }
    }
}
