//! Model parameters and the distribution types shared by every module.
//!
//! The root label is uniform on {+1, -1}. Edges of the d-ary tree flip the
//! label independently with probability `epsilon`. Messages take values in a
//! finite alphabet `0..m`; the law of a message conditioned on the root label
//! is a [`CondPair`], and the law of the posterior mean `E[X | Y]` is a
//! [`ScoreDist`].

use crate::error::{Error, Result};

/// Tolerance used when validating that a probability vector sums to one on
/// input. Stored vectors are renormalized, so the invariant afterwards is
/// exact up to rounding.
pub(crate) const SUM_TOL: f64 = 1e-9;

/// Score atoms closer than this are merged.
pub const MERGE_TOL: f64 = 1e-12;

/// Arity and flip probability of the broadcast process, with derived scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    d: usize,
    epsilon: f64,
    nu: f64,
    theta: f64,
    lambda: f64,
    eps_c: f64,
}

impl ModelParams {
    pub fn new(d: usize, epsilon: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::domain(format!("arity must be at least 2, got {d}")));
        }
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::domain(format!(
                "flip probability must lie in (0, 1/2), got {epsilon}"
            )));
        }
        let theta = 1.0 - 2.0 * epsilon;
        Ok(Self {
            d,
            epsilon,
            nu: 0.5 - epsilon,
            theta,
            lambda: (d as f64).sqrt() * theta,
            eps_c: critical_epsilon(d),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    /// `1/2 - epsilon`.
    pub fn nu(&self) -> f64 {
        self.nu
    }
    /// `1 - 2 epsilon`, the per-edge correlation.
    pub fn theta(&self) -> f64 {
        self.theta
    }
    /// `sqrt(d) * theta`; reconstruction is solvable iff this exceeds one.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    /// Kesten-Stigum threshold `(1 - d^{-1/2}) / 2`.
    pub fn eps_c(&self) -> f64 {
        self.eps_c
    }
    /// `4 d nu^2 = lambda^2`, the per-level SKL contraction factor.
    pub fn ks_factor(&self) -> f64 {
        4.0 * self.d as f64 * self.nu * self.nu
    }
}

/// Kesten-Stigum threshold of the d-ary tree.
pub fn critical_epsilon(d: usize) -> f64 {
    0.5 * (1.0 - 1.0 / (d as f64).sqrt())
}

/// Validates `(d, epsilon)` and returns the populated parameter set.
pub fn make_params(d: usize, epsilon: f64) -> Result<ModelParams> {
    ModelParams::new(d, epsilon)
}

/// A probability vector over the symbols `0..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDist {
    probs: Vec<f64>,
}

impl FiniteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("empty probability vector"));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::domain(format!("invalid probability entry {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::domain(format!("probabilities sum to {total}, not 1")));
        }
        let mut probs = probs;
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(Self { probs })
    }

    pub fn point_mass(m: usize, symbol: usize) -> Self {
        assert!(symbol < m, "symbol {symbol} outside alphabet of size {m}");
        let mut probs = vec![0.0; m];
        probs[symbol] = 1.0;
        Self { probs }
    }

    pub fn uniform(m: usize) -> Self {
        assert!(m > 0);
        Self {
            probs: vec![1.0 / m as f64; m],
        }
    }

    /// `Ber(p)` on `{0, 1}`, with `p` the mass of symbol 1.
    pub fn bernoulli(p: f64) -> Result<Self> {
        Self::new(vec![1.0 - p, p])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// The `k`-fold product distribution over `m^k` tuples, lexicographic
    /// with the first coordinate most significant.
    pub fn tensor_power(&self, k: usize) -> FiniteDist {
        let mut out = vec![1.0];
        for _ in 0..k {
            out = out
                .iter()
                .flat_map(|a| self.probs.iter().map(move |b| a * b))
                .collect();
        }
        FiniteDist { probs: out }
    }

    pub(crate) fn from_raw_unchecked(probs: Vec<f64>) -> Self {
        Self { probs }
    }
}

/// The laws `(P+, P-)` of a message conditioned on the root label.
#[derive(Debug, Clone, PartialEq)]
pub struct CondPair {
    pub plus: FiniteDist,
    pub minus: FiniteDist,
}

impl CondPair {
    pub fn new(plus: FiniteDist, minus: FiniteDist) -> Result<Self> {
        check_same(&plus, &minus)?;
        Ok(Self { plus, minus })
    }

    pub fn alphabet(&self) -> usize {
        self.plus.len()
    }

    /// The pair with conditioning labels exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            plus: self.minus.clone(),
            minus: self.plus.clone(),
        }
    }

    /// Smallest mass any symbol receives under either label.
    pub fn boundary_distance(&self) -> f64 {
        self.plus.min_prob().min(self.minus.min_prob())
    }

    /// Probability that the Bayes decision from the message is correct.
    pub fn success_probability(&self) -> f64 {
        let agree: f64 = self
            .plus
            .probs()
            .iter()
            .zip(self.minus.probs())
            .map(|(p, q)| p.max(*q))
            .sum();
        0.5 * agree
    }
}

pub(crate) fn check_same(p: &FiniteDist, q: &FiniteDist) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::AlphabetMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

/// `(1/2 + delta) P + (1/2 - delta) Q`.
pub fn mixture(p: &FiniteDist, q: &FiniteDist, delta: f64) -> Result<FiniteDist> {
    check_same(p, q)?;
    if !(0.0..=0.5).contains(&delta) {
        return Err(Error::domain(format!("mixture weight {delta} outside [0, 1/2]")));
    }
    Ok(FiniteDist::from_raw_unchecked(mix_raw(p.probs(), q.probs(), delta)))
}

pub(crate) fn mix_raw(p: &[f64], q: &[f64], delta: f64) -> Vec<f64> {
    let (a, b) = (0.5 + delta, 0.5 - delta);
    p.iter().zip(q).map(|(x, y)| a * x + b * y).collect()
}

/// A finite atomic distribution on the real line.
///
/// Values are strictly increasing and weights positive, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicDist {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl AtomicDist {
    /// Sorts, merges atoms within [`MERGE_TOL`], drops zero weights and
    /// renormalizes.
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut atoms: Vec<(f64, f64)> = pairs.into_iter().collect();
        if let Some(&(v, w)) = atoms
            .iter()
            .find(|(v, w)| !v.is_finite() || !(*w >= 0.0 && w.is_finite()))
        {
            return Err(Error::domain(format!("invalid atom ({v}, {w})")));
        }
        atoms.retain(|&(_, w)| w > 0.0);
        if atoms.is_empty() {
            return Err(Error::domain("distribution has no atoms"));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self::from_sorted(atoms)
    }

    /// Equal-weight atoms at the given sample values.
    pub fn empirical(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("distribution has no atoms"));
        }
        let w = 1.0 / samples.len() as f64;
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self::from_sorted(sorted.into_iter().map(|v| (v, w)).collect())
    }

    fn from_sorted(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let mut values: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut weights: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut anchor = f64::NAN;
        for (v, w) in atoms {
            if !values.is_empty() && v - anchor < MERGE_TOL {
                *weights.last_mut().unwrap() += w;
            } else {
                anchor = v;
                values.push(v);
                weights.push(w);
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::domain(format!("atom weights sum to {total}, not 1")));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { values, weights })
    }

    pub fn point_mass(value: f64) -> Self {
        Self {
            values: vec![value],
            weights: vec![1.0],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(v, w)| v * w).sum()
    }

    /// `E[X^k]`.
    pub fn moment(&self, k: i32) -> f64 {
        self.iter().map(|(v, w)| w * v.powi(k)).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.iter().map(|(v, w)| w * (v - m) * (v - m)).sum()
    }

    /// The law of `scale * X`.
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        Self::from_pairs(self.iter().map(|(v, w)| (scale * v, w)))
    }

    /// The mirror mixture `(law(X) + law(-X)) / 2`.
    pub fn symmetrized(&self) -> Self {
        Self::from_pairs(self.iter().flat_map(|(v, w)| [(v, 0.5 * w), (-v, 0.5 * w)]))
            .expect("mirror of a valid distribution is valid")
    }
}

/// The law of the score `S = E[X | Y]`, an atomic distribution on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDist {
    atoms: AtomicDist,
    sigma2: f64,
    mu4: f64,
}

impl ScoreDist {
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        Self::from_atomic(AtomicDist::from_pairs(pairs)?)
    }

    pub fn from_atomic(atoms: AtomicDist) -> Result<Self> {
        if let Some(v) = atoms.values().iter().find(|v| v.abs() > 1.0 + MERGE_TOL) {
            return Err(Error::domain(format!("score {v} outside [-1, 1]")));
        }
        let sigma2 = atoms.moment(2);
        let mu4 = atoms.moment(4);
        Ok(Self {
            atoms,
            sigma2,
            mu4,
        })
    }

    pub fn point_mass(value: f64) -> Self {
        Self::from_atomic(AtomicDist::point_mass(value)).expect("valid point mass")
    }

    pub fn atoms(&self) -> &AtomicDist {
        &self.atoms
    }

    /// Second moment, which equals the chi-square information `I2(X; Y)`.
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Fourth moment.
    pub fn mu4(&self) -> f64 {
        self.mu4
    }

    /// True when the atom set is closed under negation with matching weights.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let v = self.atoms.values();
        let w = self.atoms.weights();
        let n = v.len();
        (0..n).all(|i| (v[i] + v[n - 1 - i]).abs() <= tol && (w[i] - w[n - 1 - i]).abs() <= tol)
    }

    /// The law of the score conditioned on the root label being `+1`, which
    /// has density `1 + s` with respect to the unconditional law.
    pub fn conditional_plus(&self) -> Result<AtomicDist> {
        AtomicDist::from_pairs(self.atoms.iter().map(|(v, w)| (v, w * (1.0 + v))))
    }

    /// Inverse of [`ScoreDist::conditional_plus`] for a label-symmetric
    /// scheme: the unconditional law is the mirror mixture of the law
    /// given `+1`.
    pub fn from_conditional_plus(cond: &AtomicDist) -> Result<Self> {
        Self::from_atomic(cond.symmetrized())
    }
}

/// The law of `E[X | Y]` induced by a conditional pair under the uniform prior.
///
/// Each symbol with positive total mass contributes an atom at
/// `(P+(y) - P-(y)) / (P+(y) + P-(y))` with weight `(P+(y) + P-(y)) / 2`.
pub fn posterior_scores(pair: &CondPair) -> ScoreDist {
    let atoms = pair
        .plus
        .probs()
        .iter()
        .zip(pair.minus.probs())
        .filter(|(p, q)| **p + **q > 0.0)
        .map(|(p, q)| ((p - q) / (p + q), 0.5 * (p + q)));
    ScoreDist::from_pairs(atoms).expect("posterior of a valid pair is a valid score law")
}

/// A row-stochastic kernel applied independently to every message on its way
/// to the parent.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseChannel {
    size: usize,
    kernel: Vec<f64>,
}

impl NoiseChannel {
    pub fn new(size: usize, kernel: Vec<f64>) -> Result<Self> {
        if kernel.len() != size * size {
            return Err(Error::domain(format!(
                "kernel has {} entries, expected {}",
                kernel.len(),
                size * size
            )));
        }
        let mut kernel = kernel;
        for row in kernel.chunks_mut(size) {
            let dist = FiniteDist::new(row.to_vec())?;
            row.copy_from_slice(dist.probs());
        }
        Ok(Self { size, kernel })
    }

    pub fn identity(size: usize) -> Self {
        let mut kernel = vec![0.0; size * size];
        (0..size).for_each(|i| kernel[i * size + i] = 1.0);
        Self { size, kernel }
    }

    /// The channel `y -> (1 - delta) 1{y} + delta mu`.
    pub fn mixture(delta: f64, noise: &FiniteDist) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::domain(format!("noise weight {delta} outside [0, 1]")));
        }
        let size = noise.len();
        let mut kernel = vec![0.0; size * size];
        for (x, row) in kernel.chunks_mut(size).enumerate() {
            for (y, k) in row.iter_mut().enumerate() {
                *k = delta * noise.probs()[y] + if x == y { 1.0 - delta } else { 0.0 };
            }
        }
        Ok(Self { size, kernel })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.kernel[x * self.size..(x + 1) * self.size]
    }

    /// Output law when the input has law `p`.
    pub fn apply(&self, p: &FiniteDist) -> Result<FiniteDist> {
        if p.len() != self.size {
            return Err(Error::AlphabetMismatch {
                left: p.len(),
                right: self.size,
            });
        }
        Ok(FiniteDist::from_raw_unchecked(self.apply_raw(p.probs())))
    }

    pub(crate) fn apply_raw(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        for (x, px) in p.iter().enumerate() {
            if *px == 0.0 {
                continue;
            }
            for (o, k) in out.iter_mut().zip(self.row(x)) {
                *o += px * k;
            }
        }
        out
    }
}
