//! Exact belief propagation: the combine rule, a brute-force oracle on small
//! trees, population-dynamics density evolution of the score law, and the
//! two-child constructions `S-hat`, `S-bar`.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{divergence_raw, nongaussianness, skl_raw, DivergenceKind};
use crate::model::{mix_raw, posterior_scores, AtomicDist, CondPair, FiniteDist, ModelParams, ScoreDist};
use crate::seed;

/// Posterior score of a node from its children's scores `y_i`:
/// `(prod(1 + theta y_i) - prod(1 - theta y_i)) / (prod(1 + theta y_i) + prod(1 - theta y_i))`.
pub fn bp_combine(scores: &[f64], theta: f64) -> Result<f64> {
    if let Some(y) = scores.iter().find(|y| !(y.abs() <= 1.0)) {
        return Err(Error::domain(format!("score {y} outside [-1, 1]")));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::domain(format!("theta = {theta} outside [0, 1]")));
    }
    let (a, b) = scores.iter().fold((1.0, 1.0), |(a, b), y| (a * (1.0 + theta * y), b * (1.0 - theta * y)));
    if a + b == 0.0 {
        return Err(Error::ContradictoryEvidence);
    }
    Ok(((a - b) / (a + b)).clamp(-1.0, 1.0))
}

/// Exact quantities for a complete tree of small depth.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForce {
    pub skl: f64,
    pub tv: f64,
    pub scores: ScoreDist,
    /// Leaf-configuration laws given the root label.
    pub pair: CondPair,
}

/// Largest number of leaves [`brute_force_tree`] enumerates.
pub const BRUTE_FORCE_MAX_LEAVES: usize = 16;

/// Enumerates every leaf configuration of the depth-`depth` tree.
pub fn brute_force_tree(params: &ModelParams, depth: usize) -> Result<BruteForce> {
    let d = params.d();
    let leaves = (d as u128).checked_pow(depth as u32).unwrap_or(u128::MAX);
    if leaves > BRUTE_FORCE_MAX_LEAVES as u128 {
        return Err(Error::Budget {
            needed: leaves,
            limit: BRUTE_FORCE_MAX_LEAVES as u128,
        });
    }
    // symbol 1 is the label +1
    let mut plus = vec![0.0, 1.0];
    let mut minus = vec![1.0, 0.0];
    for _ in 0..depth {
        let mp = FiniteDist::from_raw_unchecked(mix_raw(&plus, &minus, params.nu()));
        let mm = FiniteDist::from_raw_unchecked(mix_raw(&minus, &plus, params.nu()));
        plus = mp.tensor_power(d).probs().to_vec();
        minus = mm.tensor_power(d).probs().to_vec();
    }
    let pair = CondPair {
        plus: FiniteDist::from_raw_unchecked(plus),
        minus: FiniteDist::from_raw_unchecked(minus),
    };
    Ok(BruteForce {
        skl: skl_raw(pair.plus.probs(), pair.minus.probs()),
        tv: divergence_raw(DivergenceKind::Tv, pair.plus.probs(), pair.minus.probs()),
        scores: posterior_scores(&pair),
        pair,
    })
}

/// A population of scores drawn from the law of `S_n` given root label `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePool {
    samples: Vec<f64>,
    /// Sizes of the independent sub-populations, in storage order.
    replicates: Vec<usize>,
    level: usize,
    seed: u64,
}

impl ScorePool {
    fn leaves(pool_size: usize, replicates: usize, seed: u64) -> Self {
        let base = pool_size / replicates;
        let extra = pool_size % replicates;
        Self {
            samples: vec![1.0; pool_size],
            replicates: (0..replicates).map(|r| base + usize::from(r < extra)).collect(),
            level: 0,
            seed,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replicate_sizes(&self) -> &[usize] {
        &self.replicates
    }

    /// Samples of each sub-population.
    pub fn replicate_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.replicates.len());
        let mut rest = self.samples.as_slice();
        for &n in &self.replicates {
            let (head, tail) = rest.split_at(n);
            out.push(head);
            rest = tail;
        }
        out
    }

    /// The unconditional law: every sample mirrored with half weight.
    pub fn unconditional(&self) -> AtomicDist {
        symmetric_law(&self.samples)
    }

    /// `E[S^2]` estimated as the pool mean of `s`.
    pub fn sigma2_hat(&self) -> f64 {
        mean(&self.samples)
    }

    /// `E[S^4]` estimated as the pool mean of `s^4`.
    pub fn mu4_hat(&self) -> f64 {
        mean_of(&self.samples, |s| (s * s) * (s * s))
    }

    fn step(&self, params: &ModelParams) -> Self {
        let d = params.d();
        let theta = params.theta();
        let eps = params.epsilon();
        let level = self.level + 1;
        let mut samples = vec![0.0; self.samples.len()];
        let mut offset = 0;
        for (r, &n) in self.replicates.iter().enumerate() {
            let prev = &self.samples[offset..offset + n];
            let out = &mut samples[offset..offset + n];
            out.par_chunks_mut(POOL_CHUNK).enumerate().for_each(|(c, chunk)| {
                let mut rng = seed::stream(self.seed, &[level as u64, r as u64, c as u64]);
                for slot in chunk.iter_mut() {
                    let (mut a, mut b) = (1.0, 1.0);
                    for _ in 0..d {
                        let mut y = prev[rng.random_range(0..n)];
                        if rng.random::<f64>() < eps {
                            y = -y;
                        }
                        a *= 1.0 + theta * y;
                        b *= 1.0 - theta * y;
                    }
                    *slot = (a - b) / (a + b);
                }
            });
            offset += n;
        }
        Self {
            samples,
            replicates: self.replicates.clone(),
            level,
            seed: self.seed,
        }
    }
}

const POOL_CHUNK: usize = 1 << 14;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn mean_of(x: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    x.iter().map(|v| f(*v)).sum::<f64>() / x.len() as f64
}

fn symmetric_law(samples: &[f64]) -> AtomicDist {
    let mirrored: Vec<f64> = samples.iter().flat_map(|s| [*s, -*s]).collect();
    AtomicDist::empirical(&mirrored).expect("pool is non-empty")
}

/// Mean and standard error of per-replicate estimates.
fn mean_se(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    let m = values.iter().sum::<f64>() / r;
    if values.len() < 2 {
        return (m, f64::NAN);
    }
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (r - 1.0);
    (m, (var / r).sqrt())
}

/// Wasserstein distance from the standardized unconditional law to the
/// nearest centred Gaussian.
fn standardized_w2(samples: &[f64]) -> f64 {
    let var = mean_of(samples, |s| s * s);
    if var <= 0.0 {
        return 0.0;
    }
    let scale = 1.0 / var.sqrt();
    let scaled: Vec<f64> = samples.iter().map(|s| s * scale).collect();
    nongaussianness(&symmetric_law(&scaled)).value
}

/// Which levels get the (sorting-heavy) non-Gaussianness diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum W2Levels {
    All,
    Terminal,
    Never,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityOptions {
    /// Number of independent sub-populations used for standard errors.
    pub replicates: usize,
    /// Points `s` at which the unconditional mgf `E[exp(s S)]` is tracked.
    pub mgf_grid: Vec<f64>,
    pub w2_levels: W2Levels,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            replicates: 10,
            mgf_grid: vec![-2.0, -1.0, -0.5, 0.5, 1.0, 2.0],
            w2_levels: W2Levels::All,
        }
    }
}

/// Statistics of the pool after one level.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRecord {
    pub level: usize,
    /// `E[S^2]`, estimated as the mean of `s` under the law given `+1`.
    pub sigma2: f64,
    pub stderr_sigma2: f64,
    /// Plug-in mean of `s^2` given `+1`, which has the same expectation.
    pub sigma2_plugin: f64,
    /// `mean(s) - mean(s^2)` and its standard error.
    pub conservation_gap: f64,
    pub stderr_conservation: f64,
    pub mu4: f64,
    pub stderr_mu4: f64,
    /// `NaN` on levels where the diagnostic was skipped.
    pub w2_gauss: f64,
    pub stderr_w2: f64,
    pub mgf: Vec<f64>,
    pub stderr_mgf: Vec<f64>,
    /// Per-replicate mgf values, `[grid point][replicate]`.
    pub mgf_replicates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEvolutionReport {
    pub records: Vec<DensityRecord>,
    pub mgf_grid: Vec<f64>,
    /// Terminal `sigma2`.
    pub xi_hat: f64,
    pub pool: ScorePool,
}

pub const DENSITY_HEADER: &str = "level,sigma2,mu4,w2_gauss,stderr_sigma2";

impl DensityEvolutionReport {
    pub fn last(&self) -> &DensityRecord {
        self.records.last().expect("report is non-empty")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(DENSITY_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{}", r.level, r.sigma2, r.mu4, r.w2_gauss, r.stderr_sigma2);
        }
        out
    }
}

pub const MIN_POOL: usize = 10_000;

/// Population dynamics for the BP score law with perfect leaves.
pub fn density_evolution(params: &ModelParams, depth: usize, pool_size: usize, seed: u64) -> Result<DensityEvolutionReport> {
    density_evolution_with(params, depth, pool_size, seed, &DensityOptions::default())
}

pub fn density_evolution_with(
    params: &ModelParams,
    depth: usize,
    pool_size: usize,
    seed: u64,
    opts: &DensityOptions,
) -> Result<DensityEvolutionReport> {
    if pool_size < MIN_POOL {
        return Err(Error::domain(format!("pool size must be at least {MIN_POOL}")));
    }
    if opts.replicates < 2 || opts.replicates > pool_size {
        return Err(Error::domain("need at least two replicates"));
    }
    if let Some(s) = opts.mgf_grid.iter().find(|s| !(s.abs() <= 10.0)) {
        return Err(Error::domain(format!("mgf point {s} outside [-10, 10]")));
    }
    let mut pool = ScorePool::leaves(pool_size, opts.replicates, seed);
    let mut records = Vec::with_capacity(depth + 1);
    records.push(level_stats(&pool, opts, opts.w2_levels == W2Levels::All || (depth == 0 && opts.w2_levels == W2Levels::Terminal)));
    for level in 1..=depth {
        pool = pool.step(params);
        let w2 = match opts.w2_levels {
            W2Levels::All => true,
            W2Levels::Terminal => level == depth,
            W2Levels::Never => false,
        };
        records.push(level_stats(&pool, opts, w2));
    }
    Ok(DensityEvolutionReport {
        xi_hat: records.last().map(|r| r.sigma2).unwrap_or(1.0),
        records,
        mgf_grid: opts.mgf_grid.clone(),
        pool,
    })
}

fn level_stats(pool: &ScorePool, opts: &DensityOptions, with_w2: bool) -> DensityRecord {
    let reps = pool.replicate_slices();
    let per = |f: &dyn Fn(&[f64]) -> f64| -> Vec<f64> { reps.iter().map(|r| f(r)).collect() };
    let s1 = per(&|x| mean(x));
    let s2 = per(&|x| mean_of(x, |s| s * s));
    let s4 = per(&|x| mean_of(x, |s| (s * s) * (s * s)));
    let gap: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a - b).collect();
    let (_, se1) = mean_se(&s1);
    let (_, se4) = mean_se(&s4);
    let (_, se_gap) = mean_se(&gap);
    let mut mgf = Vec::with_capacity(opts.mgf_grid.len());
    let mut stderr_mgf = Vec::with_capacity(opts.mgf_grid.len());
    let mut mgf_replicates = Vec::with_capacity(opts.mgf_grid.len());
    for &t in &opts.mgf_grid {
        let vals = per(&|x| mean_of(x, |s| (t * s).cosh()));
        let (_, se) = mean_se(&vals);
        mgf.push(mean_of(pool.samples(), |s| (t * s).cosh()));
        stderr_mgf.push(se);
        mgf_replicates.push(vals);
    }
    let (w2_gauss, stderr_w2) = if with_w2 {
        let per_rep: Vec<f64> = reps.iter().map(|r| standardized_w2(r)).collect();
        (standardized_w2(pool.samples()), mean_se(&per_rep).1)
    } else {
        (f64::NAN, f64::NAN)
    };
    let sigma2 = pool.sigma2_hat();
    let sigma2_plugin = mean_of(pool.samples(), |s| s * s);
    DensityRecord {
        level: pool.level(),
        sigma2,
        stderr_sigma2: se1,
        sigma2_plugin,
        conservation_gap: sigma2 - sigma2_plugin,
        stderr_conservation: se_gap,
        mu4: pool.mu4_hat(),
        stderr_mu4: se4,
        w2_gauss,
        stderr_w2,
        mgf,
        stderr_mgf,
        mgf_replicates,
    }
}

/// The two-child laws `(S-hat, S-bar)` built from an unconditional symmetric
/// score law: with `a = theta s`, `S-bar = a + a'` under the product law and
/// `S-hat = (a + a') / (1 + a a')` under the product law tilted by `1 + a a'`.
/// `S-bar` exceeds `[-1, 1]` once `theta > 1/2`, so it is returned as a plain
/// atomic law.
pub fn build_hat_bar(s: &ScoreDist, theta: f64) -> Result<(ScoreDist, AtomicDist)> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::domain(format!("theta = {theta} outside [0, 1]")));
    }
    if !s.is_symmetric(1e-12) {
        return Err(Error::domain("hat/bar construction needs a symmetric score law"));
    }
    let atoms: Vec<(f64, f64)> = s.atoms().iter().map(|(v, w)| (theta * v, w)).collect();
    let n = atoms.len();
    let mut hat = Vec::with_capacity(n * n);
    let mut bar = Vec::with_capacity(n * n);
    for &(a, wa) in &atoms {
        for &(b, wb) in &atoms {
            let w = wa * wb;
            bar.push((a + b, w));
            let tilt = 1.0 + a * b;
            if tilt > 0.0 {
                hat.push(((a + b) / tilt, w * tilt));
            }
        }
    }
    Ok((ScoreDist::from_pairs(hat)?, AtomicDist::from_pairs(bar)?))
}

/// Empirical mgf `E[exp(s Z)]` of an atomic law at each grid point.
pub fn mgf_curve(law: &AtomicDist, s_grid: &[f64]) -> Result<Vec<f64>> {
    if let Some(s) = s_grid.iter().find(|s| !(s.abs() <= 10.0)) {
        return Err(Error::domain(format!("mgf point {s} outside [-10, 10]")));
    }
    Ok(s_grid
        .iter()
        .map(|&t| if t == 0.0 { 1.0 } else { law.iter().map(|(v, w)| w * (t * v).exp()).sum() })
        .collect())
}
