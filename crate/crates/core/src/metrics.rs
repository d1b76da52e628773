//! Information measures: divergences between finite distributions, 1-D
//! Wasserstein distances, entropy, chi-square information, Wasserstein
//! non-Gaussianness, and the explicit bound functions used by the checks.
//!
//! All logarithms are natural.

use libm::erf;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::model::{check_same, AtomicDist, FiniteDist, ScoreDist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DivergenceKind {
    /// `KL(P, Q)`.
    Kl,
    /// `KL(P, Q) + KL(Q, P)`.
    Skl,
    /// Total variation `(1/2) sum |p - q|`.
    Tv,
    /// Squared Hellinger distance `1 - sum sqrt(p q)`.
    Hellinger2,
}

/// Divergence between two distributions on the same alphabet. KL and SKL
/// return `+inf` when the supports are incompatible.
pub fn divergence(kind: DivergenceKind, p: &FiniteDist, q: &FiniteDist) -> Result<f64> {
    check_same(p, q)?;
    Ok(divergence_raw(kind, p.probs(), q.probs()))
}

pub(crate) fn divergence_raw(kind: DivergenceKind, p: &[f64], q: &[f64]) -> f64 {
    match kind {
        DivergenceKind::Kl => kl_raw(p, q),
        DivergenceKind::Skl => skl_raw(p, q),
        DivergenceKind::Tv => tv_raw(p, q),
        DivergenceKind::Hellinger2 => hellinger2_raw(p, q),
    }
}

pub(crate) fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b == 0.0 {
                return f64::INFINITY;
            }
            acc += a * (a / b).ln();
        }
    }
    acc.max(0.0)
}

pub(crate) fn skl_raw(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a == b {
            continue;
        }
        if a == 0.0 || b == 0.0 {
            return f64::INFINITY;
        }
        acc += (a - b) * (a.ln() - b.ln());
    }
    acc
}

pub(crate) fn tv_raw(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub(crate) fn hellinger2_raw(p: &[f64], q: &[f64]) -> f64 {
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    (1.0 - bc).max(0.0)
}

/// `I2(X; Y) = E[S^2]` for the score law `S`.
pub fn chi2_information(s: &ScoreDist) -> f64 {
    s.sigma2()
}

/// `W_p^p(A, B)` under the quantile coupling, exact for atomic laws.
pub fn wasserstein_pow(p: f64, a: &AtomicDist, b: &AtomicDist) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::domain(format!("Wasserstein order must be >= 1, got {p}")));
    }
    let (av, bv) = (a.values(), b.values());
    let ca = cumulative(a.weights());
    let cb = cumulative(b.weights());
    let (mut i, mut j) = (0, 0);
    let mut pos = 0.0;
    let mut acc = 0.0;
    while i < av.len() && j < bv.len() {
        let next = ca[i].min(cb[j]);
        acc += (next - pos) * (av[i] - bv[j]).abs().powf(p);
        pos = next;
        if ca[i] <= next {
            i += 1;
        }
        if cb[j] <= next {
            j += 1;
        }
    }
    Ok(acc)
}

fn cumulative(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = w
        .iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect();
    *out.last_mut().expect("non-empty") = 1.0;
    out
}

/// `W_p(A, B)` for atomic distributions on the line.
pub fn wasserstein(p: f64, a: &AtomicDist, b: &AtomicDist) -> Result<f64> {
    Ok(wasserstein_pow(p, a, b)?.powf(1.0 / p))
}

/// Result of [`nongaussianness`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonGaussianness {
    /// `inf_sigma W2(Z, E[Z] + sigma G)`.
    pub value: f64,
    /// The minimizing `sigma` (zero when the infimum is the `sigma -> 0` limit).
    pub sigma_star: f64,
}

/// Wasserstein non-Gaussianness of an atomic law.
///
/// `W2^2(Z, m + sigma G) = Var Z - 2 sigma c + sigma^2` where
/// `c = int (F_Z^{-1}(u) - m) Phi^{-1}(u) du`. On an atom occupying the
/// quantile interval `[u0, u1]` the inner integral is
/// `phi(Phi^{-1}(u0)) - phi(Phi^{-1}(u1))`.
pub fn nongaussianness(z: &AtomicDist) -> NonGaussianness {
    let m = z.mean();
    let var = z.variance();
    let mut cum = 0.0;
    let mut g_prev = 0.0;
    let mut c = 0.0;
    let n = z.len();
    for (k, (v, w)) in z.iter().enumerate() {
        cum += w;
        let g_next = if k + 1 == n { 0.0 } else { gauss_quantile_density(cum) };
        c += (v - m) * (g_prev - g_next);
        g_prev = g_next;
    }
    let sigma_star = c.max(0.0);
    let value = (var - 2.0 * sigma_star * c + sigma_star * sigma_star).max(0.0).sqrt();
    NonGaussianness { value, sigma_star }
}

/// `phi(Phi^{-1}(u))`, zero at the endpoints.
fn gauss_quantile_density(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        return 0.0;
    }
    let x = std_normal_quantile(u);
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile `Phi^{-1}(u)`.
pub fn std_normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Shannon entropy in nats.
pub fn entropy(z: &AtomicDist) -> f64 {
    -z.weights().iter().filter(|w| **w > 0.0).map(|w| w * w.ln()).sum::<f64>()
}

/// `alpha_p(mu) = mu^{1/(1+p)} (4 + 8 / (1 - mu^{1/(1+p)})^{1/p})^p` on
/// `0 <= mu <= 2^{-(1+p)}`.
pub fn alpha_bound(p: f64, mu: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::domain(format!("order must be >= 1, got {p}")));
    }
    let max_mu = 2f64.powf(-(1.0 + p));
    if !(mu >= 0.0 && mu <= max_mu) {
        return Err(Error::domain(format!("mu = {mu} outside [0, {max_mu}]")));
    }
    let r = mu.powf(1.0 / (1.0 + p));
    Ok(r * (4.0 + 8.0 / (1.0 - r).powf(1.0 / p)).powf(p))
}

/// `omega(eps) = 4 - 2 / (1 - 2 eps)^2` for the binary tree, positive below
/// the threshold.
pub fn omega_bound(epsilon: f64) -> Result<f64> {
    let eps_c = crate::model::critical_epsilon(2);
    if !(epsilon >= 0.0 && epsilon < eps_c) {
        return Err(Error::domain(format!("epsilon = {epsilon} outside [0, {eps_c})")));
    }
    let theta = 1.0 - 2.0 * epsilon;
    Ok(4.0 - 2.0 / (theta * theta))
}

/// SDPI constant `1 - 2 F(1/delta)` of additive Gaussian noise with standard
/// deviation `delta` on `[-1, 1]`-valued messages, `F` the Gaussian tail.
pub fn gaussian_threshold_sdpi(delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::domain(format!("noise level must be positive, got {delta}")));
    }
    // 1 - 2 (1 - Phi(x)) = erf(x / sqrt 2)
    Ok(erf(1.0 / (delta * std::f64::consts::SQRT_2)))
}
