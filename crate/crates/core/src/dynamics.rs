//! Exact evolution of the conditional message laws `(P_n+, P_n-)` under a
//! finite-alphabet scheme, plus the Boolean-function tools built on it.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{divergence_raw, kl_raw, skl_raw, DivergenceKind};
use crate::model::{mix_raw, posterior_scores, CondPair, FiniteDist, ModelParams, NoiseChannel};
use crate::scheme::{decode_tuple, tuple_count, LevelRule, ReconstructionScheme};

/// Default cap on child-tuple evaluations per level.
pub const DEFAULT_TUPLE_BUDGET: u128 = 1 << 24;

/// One level of a [`PairTrajectory`].
#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    pub level: usize,
    pub pair: CondPair,
    pub skl: f64,
    pub tv: f64,
    pub hell2: f64,
    pub sigma2: f64,
    pub boundary_dist: f64,
    /// `SKL` between the two product laws fed to the level rule; `NaN` at the
    /// leaves.
    pub pre_skl: f64,
}

impl LevelRecord {
    pub(crate) fn new(level: usize, pair: CondPair, pre_skl: f64) -> Self {
        let (p, q) = (pair.plus.probs(), pair.minus.probs());
        Self {
            level,
            skl: skl_raw(p, q),
            tv: divergence_raw(DivergenceKind::Tv, p, q),
            hell2: divergence_raw(DivergenceKind::Hellinger2, p, q),
            sigma2: posterior_scores(&pair).sigma2(),
            boundary_dist: pair.boundary_distance(),
            pre_skl,
            pair,
        }
    }
}

/// Per-level record of an exact pair evolution, starting at the leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTrajectory {
    pub records: Vec<LevelRecord>,
}

pub const TRAJECTORY_HEADER: &str = "level,skl,tv,hell2,sigma2,boundary_dist";

impl PairTrajectory {
    pub fn last(&self) -> &LevelRecord {
        self.records.last().expect("trajectory is non-empty")
    }

    pub fn skl(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.skl).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAJECTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.level, r.skl, r.tv, r.hell2, r.sigma2, r.boundary_dist
            );
        }
        out
    }
}

/// Evolves the pair through `depth` levels with the default tuple budget.
pub fn evolve_pair(
    params: &ModelParams,
    scheme: &ReconstructionScheme,
    channel: Option<&NoiseChannel>,
    depth: usize,
) -> Result<PairTrajectory> {
    evolve_pair_with_budget(params, scheme, channel, depth, DEFAULT_TUPLE_BUDGET)
}

pub fn evolve_pair_with_budget(
    params: &ModelParams,
    scheme: &ReconstructionScheme,
    channel: Option<&NoiseChannel>,
    depth: usize,
    budget: u128,
) -> Result<PairTrajectory> {
    let l = scheme.alphabet();
    let d = scheme.d();
    if depth < 1 {
        return Err(Error::domain("depth must be at least 1"));
    }
    if d != params.d() {
        return Err(Error::domain(format!(
            "scheme arity {d} differs from model arity {}",
            params.d()
        )));
    }
    if let Some(ch) = channel {
        if ch.size() != l {
            return Err(Error::AlphabetMismatch { left: l, right: ch.size() });
        }
    }
    let needed = (l as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
    if needed > budget {
        return Err(Error::Budget { needed, limit: budget });
    }

    let nu = params.nu();
    let mut plus = scheme.leaf_plus().to_vec();
    let mut minus = scheme.leaf_minus().to_vec();
    let mut records = Vec::with_capacity(depth + 1);
    records.push(LevelRecord::new(0, pair_unchecked(&plus, &minus), f64::NAN));
    for level in 1..=depth {
        let mut mp = mix_raw(&plus, &minus, nu);
        let mut mm = mix_raw(&minus, &plus, nu);
        if let Some(ch) = channel {
            mp = ch.apply_raw(&mp);
            mm = ch.apply_raw(&mm);
        }
        let pre_skl = d as f64 * skl_raw(&mp, &mm);
        let rule = scheme.rule_at(level);
        plus = pushforward(rule, &mp, l, d);
        minus = pushforward(rule, &mm, l, d);
        records.push(LevelRecord::new(level, pair_unchecked(&plus, &minus), pre_skl));
    }
    Ok(PairTrajectory { records })
}

fn pair_unchecked(plus: &[f64], minus: &[f64]) -> CondPair {
    CondPair {
        plus: FiniteDist::from_raw_unchecked(plus.to_vec()),
        minus: FiniteDist::from_raw_unchecked(minus.to_vec()),
    }
}

/// Law of `rule(Y_1, ..., Y_d)` for i.i.d. `Y_i ~ m`.
///
/// The output is rescaled to unit mass: the total is `(sum m)^d`, so
/// rounding error in the mass would otherwise grow by a factor `d` per level.
pub(crate) fn pushforward(rule: &LevelRule, m: &[f64], l: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; l];
    match rule {
        LevelRule::Table(t) => for_each_product(m, l, d, |idx, w| out[t[idx]] += w),
        LevelRule::Kernel(k) => for_each_product(m, l, d, |idx, w| {
            for (o, kv) in out.iter_mut().zip(&k[idx * l..(idx + 1) * l]) {
                *o += w * kv;
            }
        }),
    }
    renormalize(&mut out);
    out
}

pub(crate) fn renormalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    }
}

/// Calls `f(idx, prod_i m[y_i])` for every tuple in table order, skipping
/// zero-weight tuples.
pub(crate) fn for_each_product(m: &[f64], l: usize, d: usize, mut f: impl FnMut(usize, f64)) {
    if d == 0 {
        f(0, 1.0);
        return;
    }
    // prefix[k] = product of the first k digits
    let mut digits = vec![0usize; d];
    let mut prefix = vec![1.0; d];
    for k in 1..d {
        prefix[k] = prefix[k - 1] * m[0];
    }
    let stride = l;
    let mut base = 0usize;
    loop {
        let pre = prefix[d - 1];
        if pre != 0.0 {
            for (y, w) in m.iter().enumerate() {
                let w = pre * w;
                if w != 0.0 {
                    f(base + y, w);
                }
            }
        }
        base += stride;
        // odometer over the first d - 1 digits
        let mut pos = d - 1;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < l {
                break;
            }
            digits[pos] = 0;
        }
        for k in pos..d - 1 {
            prefix[k + 1] = prefix[k] * m[digits[k]];
        }
    }
}

/// `SKL(f_* P^d, f_* Q^d) / (d SKL(P, Q))` for a deterministic table on
/// the alphabet of `P`.
pub fn skl_contraction_ratio(table: &[usize], p: &FiniteDist, q: &FiniteDist, d: usize) -> Result<f64> {
    contraction_ratio(table, p, q, d, skl_raw)
}

fn contraction_ratio(
    table: &[usize],
    p: &FiniteDist,
    q: &FiniteDist,
    d: usize,
    div: fn(&[f64], &[f64]) -> f64,
) -> Result<f64> {
    crate::model::check_same(p, q)?;
    let l = p.len();
    check_table(table, l, d)?;
    let base = div(p.probs(), q.probs());
    if base == 0.0 {
        return Err(Error::domain("contraction ratio undefined for P = Q"));
    }
    if !base.is_finite() {
        return Err(Error::domain("contraction ratio undefined for infinite divergence"));
    }
    let rule = LevelRule::Table(table.to_vec());
    let fp = pushforward(&rule, p.probs(), l, d);
    let fq = pushforward(&rule, q.probs(), l, d);
    Ok(div(&fp, &fq) / (d as f64 * base))
}

fn check_table(table: &[usize], l: usize, d: usize) -> Result<()> {
    let n = tuple_count(l, d).ok_or_else(|| Error::domain("tuple count overflows"))?;
    if table.len() != n {
        return Err(Error::domain(format!("table has {} entries, expected {n}", table.len())));
    }
    if table.iter().any(|s| *s >= l) {
        return Err(Error::domain("table output outside alphabet"));
    }
    Ok(())
}

/// Flags from the OR-like / AND-like classification of a Boolean function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BooleanClass {
    pub or_like: bool,
    pub and_like: bool,
    pub constant: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BooleanKind {
    OrLike,
    AndLike,
    Both,
    Constant,
    Neither,
}

impl BooleanClass {
    pub fn kind(&self) -> BooleanKind {
        match (self.constant, self.or_like, self.and_like) {
            (true, _, _) => BooleanKind::Constant,
            (_, true, true) => BooleanKind::Both,
            (_, true, false) => BooleanKind::OrLike,
            (_, false, true) => BooleanKind::AndLike,
            _ => BooleanKind::Neither,
        }
    }
}

/// Classifies a Boolean table `{0,1}^d -> {0,1}` (first argument most
/// significant).
pub fn classify_boolean(table: &[usize], d: usize) -> Result<BooleanClass> {
    if d < 1 {
        return Err(Error::domain("arity must be at least 1"));
    }
    check_table(table, 2, d)?;
    let full = (1usize << d) - 1;
    let complement: Vec<usize> = (0..=full).map(|x| 1 - table[full - x]).collect();
    Ok(BooleanClass {
        or_like: is_or_like(table, d),
        and_like: is_or_like(&complement, d),
        constant: table.iter().all(|v| *v == table[0]),
    })
}

fn is_or_like(f: &[usize], d: usize) -> bool {
    let e1 = f[1 << (d - 1)];
    f[0] != e1 && (0..d).all(|k| f[1 << k] == e1)
}

/// `log SKL(Ber p, Ber q) - lambda (log a + log(1 - a))` with `a = (p + q) / 2`.
pub fn lyapunov_phi(p: f64, q: f64, barrier_lambda: f64) -> Result<f64> {
    let open = |x: f64| x > 0.0 && x < 1.0;
    if !open(p) || !open(q) {
        return Err(Error::domain("Lyapunov function needs p, q in (0, 1)"));
    }
    if p == q {
        return Err(Error::domain("Lyapunov function needs p != q"));
    }
    if !(barrier_lambda >= 0.0) {
        return Err(Error::domain("barrier coefficient must be non-negative"));
    }
    let skl = skl_raw(&[1.0 - p, p], &[1.0 - q, q]);
    let a = 0.5 * (p + q);
    Ok(skl.ln() - barrier_lambda * (a.ln() + (1.0 - a).ln()))
}

/// `(level, phi)` along a binary trajectory, for the levels where `phi` is
/// defined and finite.
pub fn lyapunov_series(traj: &PairTrajectory, barrier_lambda: f64) -> Vec<(usize, f64)> {
    traj.records
        .iter()
        .filter(|r| r.pair.alphabet() == 2)
        .filter_map(|r| {
            lyapunov_phi(r.pair.plus.probs()[1], r.pair.minus.probs()[1], barrier_lambda)
                .ok()
                .filter(|v| v.is_finite())
                .map(|v| (r.level, v))
        })
        .collect()
}

/// A barrier coefficient under which `phi` descends along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierCalibration {
    pub lambda: f64,
    /// Smallest per-level decrease of `phi` past the burn-in.
    pub min_decrease: f64,
}

/// The barrier grid `0.01, 0.02, ..., 0.2`.
pub fn default_barrier_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 100.0).collect()
}

/// Picks the largest `lambda` in `grid` for which `phi` strictly decreases
/// between consecutive levels after `burn_in`, over the levels where it is
/// defined.
pub fn calibrate_barrier(traj: &PairTrajectory, burn_in: usize, grid: &[f64]) -> Option<BarrierCalibration> {
    let mut best: Option<BarrierCalibration> = None;
    for &lambda in grid {
        let phi: Vec<(usize, f64)> = lyapunov_series(traj, lambda)
            .into_iter()
            .filter(|(n, _)| *n >= burn_in)
            .collect();
        let steps: Vec<f64> = phi
            .windows(2)
            .filter(|w| w[1].0 == w[0].0 + 1)
            .map(|w| w[0].1 - w[1].1)
            .collect();
        if steps.is_empty() {
            continue;
        }
        let min_decrease = steps.iter().copied().fold(f64::INFINITY, f64::min);
        if min_decrease > 0.0 && best.is_none_or(|b| lambda > b.lambda) {
            best = Some(BarrierCalibration { lambda, min_decrease });
        }
    }
    best
}

/// Maximizer of the restricted SDPI scan.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpiScan {
    pub eta_hat: f64,
    pub table: Vec<usize>,
    pub p: FiniteDist,
    pub q: FiniteDist,
    pub functions: usize,
    pub pairs: usize,
}

/// Exhaustive search of `KL(f_* P^d, f_* Q^d) / (d KL(P, Q))` over all
/// tables `f` and grid pairs with coordinates `>= gamma` and `TV >= step`.
pub fn restricted_sdpi_scan(d: usize, sigma_size: usize, gamma: f64, grid_step: f64) -> Result<SdpiScan> {
    restricted_sdpi_scan_with_budget(d, sigma_size, gamma, grid_step, 1 << 32)
}

pub fn restricted_sdpi_scan_with_budget(
    d: usize,
    sigma_size: usize,
    gamma: f64,
    grid_step: f64,
    budget: u128,
) -> Result<SdpiScan> {
    if sigma_size < 2 || d < 1 {
        return Err(Error::domain("scan needs an alphabet of at least 2 symbols and d >= 1"));
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) || !(gamma >= 0.0 && gamma * sigma_size as f64 <= 1.0) {
        return Err(Error::domain("invalid grid step or gamma"));
    }
    let l = sigma_size;
    let tuples = tuple_count(l, d).ok_or_else(|| Error::domain("tuple count overflows"))?;
    let functions = (l as u128).checked_pow(tuples as u32).unwrap_or(u128::MAX);
    let grid = simplex_grid(l, gamma, grid_step);
    let mut pairs = Vec::new();
    for (i, p) in grid.iter().enumerate() {
        for (j, q) in grid.iter().enumerate() {
            if i != j && divergence_raw(DivergenceKind::Tv, p, q) >= grid_step - 1e-12 {
                pairs.push((i, j));
            }
        }
    }
    let needed = functions
        .saturating_mul(pairs.len() as u128)
        .saturating_mul(tuples as u128);
    if needed > budget {
        return Err(Error::Budget { needed, limit: budget });
    }
    if pairs.is_empty() {
        return Err(Error::domain("grid contains no admissible pairs"));
    }
    let functions = functions as usize;
    let base: Vec<f64> = pairs.iter().map(|&(i, j)| d as f64 * kl_raw(&grid[i], &grid[j])).collect();

    let best_per_fn: Vec<(f64, usize)> = (0..functions)
        .into_par_iter()
        .map(|fi| {
            let rule = LevelRule::Table(function_table(fi, l, tuples));
            let pushed: Vec<Vec<f64>> = grid.iter().map(|p| pushforward(&rule, p, l, d)).collect();
            let mut best = (f64::NEG_INFINITY, 0);
            for (k, &(i, j)) in pairs.iter().enumerate() {
                let r = kl_raw(&pushed[i], &pushed[j]) / base[k];
                if r > best.0 {
                    best = (r, k);
                }
            }
            best
        })
        .collect();
    let (mut eta_hat, mut arg_fn, mut arg_pair) = (f64::NEG_INFINITY, 0, 0);
    for (fi, &(r, k)) in best_per_fn.iter().enumerate() {
        if r > eta_hat {
            (eta_hat, arg_fn, arg_pair) = (r, fi, k);
        }
    }
    let (i, j) = pairs[arg_pair];
    Ok(SdpiScan {
        eta_hat,
        table: function_table(arg_fn, l, tuples),
        p: FiniteDist::from_raw_unchecked(grid[i].clone()),
        q: FiniteDist::from_raw_unchecked(grid[j].clone()),
        functions,
        pairs: pairs.len(),
    })
}

/// The `index`-th table in base-`l` order, entry 0 most significant.
fn function_table(index: usize, l: usize, tuples: usize) -> Vec<usize> {
    let mut t = vec![0; tuples];
    decode_tuple(index, l, &mut t);
    t
}

/// Points of the simplex on the lattice `step * Z^l` with every coordinate
/// at least `gamma`.
fn simplex_grid(l: usize, gamma: f64, step: f64) -> Vec<Vec<f64>> {
    let n = (1.0 / step).round() as usize;
    let min_k = (gamma / step - 1e-9).ceil().max(0.0) as usize;
    let mut out = Vec::new();
    let mut cur = vec![0usize; l];
    fn rec(pos: usize, left: usize, min_k: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        let l = cur.len();
        if pos == l - 1 {
            if left >= min_k {
                cur[pos] = left;
                out.push(cur.iter().map(|k| *k as f64 / n as f64).collect());
            }
            return;
        }
        for k in min_k..=left {
            cur[pos] = k;
            rec(pos + 1, left - k, min_k, n, cur, out);
        }
    }
    rec(0, n, min_k, n, &mut cur, &mut out);
    out
}

/// The three-symbol intransitive rule: on inputs drawn from `{0,1}` the
/// output is 1 unless all inputs are 0, on `{1,2}` it is 2 unless all are
/// 1, on `{2,0}` it is 0 unless all are 2; inputs using all three symbols
/// go to the plurality symbol, ties to the lowest index.
pub fn cycling_rule(x: &[usize]) -> usize {
    let mut counts = [0usize; 3];
    x.iter().for_each(|s| counts[*s] += 1);
    let present = [counts[0] > 0, counts[1] > 0, counts[2] > 0];
    match present {
        [true, false, false] => 0,
        [false, true, false] => 1,
        [false, false, true] => 2,
        [true, true, false] => 1,
        [false, true, true] => 2,
        [true, false, true] => 0,
        _ => (0..3).fold(0, |best, s| if counts[s] > counts[best] { s } else { best }),
    }
}

/// Output of [`cycling_demo`].
///
/// Near a corner the small coordinates shrink doubly exponentially, far
/// below the smallest `f64`, so the recursion is carried out on
/// log-probabilities. `trajectory` holds the exponentiated pairs (whose tiny
/// entries may read as 0); `log_boundary_dist[n]` is the log of the exact
/// distance to the boundary at level `n`.
#[derive(Debug, Clone)]
pub struct CyclingRun {
    pub trajectory: PairTrajectory,
    pub log_boundary_dist: Vec<f64>,
}

impl CyclingRun {
    /// Running minimum of `log_boundary_dist`.
    pub fn running_min(&self) -> Vec<f64> {
        let mut cur = f64::INFINITY;
        self.log_boundary_dist
            .iter()
            .map(|v| {
                cur = cur.min(*v);
                cur
            })
            .collect()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn log_mix(a: &[f64], b: &[f64], nu: f64) -> Vec<f64> {
    let (wa, wb) = ((0.5 + nu).ln(), (0.5 - nu).ln());
    a.iter().zip(b).map(|(x, y)| log_add(wa + x, wb + y)).collect()
}

fn log_pushforward(table: &[usize], logm: &[f64], l: usize, d: usize) -> Vec<f64> {
    let mut digits = vec![0usize; d];
    let mut terms: Vec<Vec<f64>> = vec![Vec::new(); l];
    for (idx, out) in table.iter().enumerate() {
        decode_tuple(idx, l, &mut digits);
        terms[*out].push(digits.iter().map(|s| logm[*s]).sum());
    }
    let mut res: Vec<f64> = terms
        .iter()
        .map(|t| {
            let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi == f64::NEG_INFINITY {
                hi
            } else {
                hi + t.iter().map(|v| (v - hi).exp()).sum::<f64>().ln()
            }
        })
        .collect();
    let total = res.iter().copied().fold(f64::NEG_INFINITY, log_add);
    res.iter_mut().for_each(|v| *v -= total);
    res
}

/// Runs the intransitive three-symbol rule from `start` for `steps` levels.
pub fn cycling_demo(params: &ModelParams, steps: usize, start: &CondPair) -> Result<CyclingRun> {
    if start.alphabet() != 3 {
        return Err(Error::AlphabetMismatch { left: start.alphabet(), right: 3 });
    }
    if start.boundary_distance() <= 0.0 {
        return Err(Error::domain("cycling start must lie in the open simplex"));
    }
    if steps < 1 {
        return Err(Error::domain("depth must be at least 1"));
    }
    let d = params.d();
    let needed = 3u128.checked_pow(d as u32).unwrap_or(u128::MAX);
    if needed > DEFAULT_TUPLE_BUDGET {
        return Err(Error::Budget { needed, limit: DEFAULT_TUPLE_BUDGET });
    }
    let table = crate::scheme::tabulate(3, d, cycling_rule);
    let nu = params.nu();
    let mut lp: Vec<f64> = start.plus.probs().iter().map(|v| v.ln()).collect();
    let mut lm: Vec<f64> = start.minus.probs().iter().map(|v| v.ln()).collect();
    let exp = |v: &[f64]| v.iter().map(|x| x.exp()).collect::<Vec<f64>>();
    let min_of = |a: &[f64], b: &[f64]| a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);

    let mut records = Vec::with_capacity(steps + 1);
    let mut log_bd = Vec::with_capacity(steps + 1);
    records.push(LevelRecord::new(0, start.clone(), f64::NAN));
    log_bd.push(min_of(&lp, &lm));
    for level in 1..=steps {
        let mp = log_mix(&lp, &lm, nu);
        let mm = log_mix(&lm, &lp, nu);
        let pre_skl = d as f64 * skl_raw(&exp(&mp), &exp(&mm));
        lp = log_pushforward(&table, &mp, 3, d);
        lm = log_pushforward(&table, &mm, 3, d);
        let (mut p, mut q) = (exp(&lp), exp(&lm));
        renormalize(&mut p);
        renormalize(&mut q);
        records.push(LevelRecord::new(level, pair_unchecked(&p, &q), pre_skl));
        log_bd.push(min_of(&lp, &lm));
    }
    Ok(CyclingRun { trajectory: PairTrajectory { records }, log_boundary_dist: log_bd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_params;
    use proptest::prelude::*;

    fn ber(p: f64) -> FiniteDist {
        FiniteDist::bernoulli(p).unwrap()
    }

    #[test]
    fn product_enumeration_matches_tensor_power() {
        let m = [0.2, 0.0, 0.5, 0.3];
        for d in 1..=3 {
            let tp = FiniteDist::from_raw_unchecked(m.to_vec()).tensor_power(d);
            let mut seen = vec![0.0; tp.len()];
            for_each_product(&m, 4, d, |idx, w| seen[idx] = w);
            assert_eq!(seen, tp.probs());
        }
    }

    #[test]
    fn majority_far_from_threshold_survives() {
        let params = make_params(3, 0.05).unwrap();
        let traj = evolve_pair(&params, &ReconstructionScheme::majority(3).unwrap(), None, 30).unwrap();
        let s = traj.skl();
        assert!(s[30] > 0.01);
        assert!((s[30] - s[29]).abs() <= 1e-9);
    }

    #[test]
    fn majority_near_threshold_dies() {
        let params = make_params(3, crate::model::critical_epsilon(3) - 0.001).unwrap();
        let traj = evolve_pair(&params, &ReconstructionScheme::majority(3).unwrap(), None, 200).unwrap();
        assert!(traj.last().skl < 1e-6);
    }

    #[test]
    fn constant_level_kills_information() {
        let params = make_params(2, 0.1).unwrap();
        let id = |x: &[usize]| x[0];
        let zero = |_: &[usize]| 0;
        let scheme = ReconstructionScheme::boolean_levels(2, &[&id, &zero, &id], false).unwrap();
        let traj = evolve_pair(&params, &scheme, None, 6).unwrap();
        assert!(traj.records[1].skl > 0.0);
        assert!(traj.records[2..].iter().all(|r| r.skl == 0.0));
    }

    #[test]
    fn budget_guard() {
        let params = make_params(2, 0.1).unwrap();
        let scheme = ReconstructionScheme::boolean(2, |x| x[0]).unwrap();
        let err = evolve_pair_with_budget(&params, &scheme, None, 3, 3).unwrap_err();
        assert_eq!(err, Error::Budget { needed: 4, limit: 3 });
        let ch = NoiseChannel::identity(3);
        assert!(matches!(
            evolve_pair(&params, &scheme, Some(&ch), 3),
            Err(Error::AlphabetMismatch { .. })
        ));
    }

    #[test]
    fn trajectory_csv_header() {
        let params = make_params(2, 0.1).unwrap();
        let scheme = ReconstructionScheme::boolean(2, |x| x[0] | x[1]).unwrap();
        let csv = evolve_pair(&params, &scheme, None, 2).unwrap().to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn contraction_ratio_examples() {
        let (p, q) = (ber(0.3), ber(0.6));
        let first = [0, 0, 1, 1];
        assert!((skl_contraction_ratio(&first, &p, &q, 2).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(skl_contraction_ratio(&[1, 1, 1, 1], &p, &q, 2).unwrap(), 0.0);
        let or = [0, 1, 1, 1];
        let r = skl_contraction_ratio(&or, &ber(1e-4), &ber(2e-4), 2).unwrap();
        assert!((0.99..=1.0 + 1e-12).contains(&r), "{r}");
        assert!(skl_contraction_ratio(&or, &p, &p, 2).is_err());
        assert!(skl_contraction_ratio(&or, &ber(0.0), &ber(1.0), 2).is_err());
    }

    #[test]
    fn classify_examples() {
        let c = |t: &[usize]| classify_boolean(t, 2).unwrap().kind();
        assert_eq!(c(&[0, 1, 1, 1]), BooleanKind::OrLike);
        assert_eq!(c(&[0, 0, 0, 1]), BooleanKind::AndLike);
        assert_eq!(c(&[0, 1, 1, 0]), BooleanKind::Both);
        assert_eq!(c(&[1, 1, 1, 1]), BooleanKind::Constant);
        assert_eq!(c(&[0, 0, 1, 1]), BooleanKind::Neither);
    }

    /// Definitional check written against explicit bit vectors.
    fn brute_class(table: &[usize], d: usize) -> BooleanClass {
        let eval = |f: &dyn Fn(&[usize]) -> usize, x: &[usize]| f(x);
        let idx = |x: &[usize]| x.iter().fold(0, |acc, b| 2 * acc + b);
        let f = |x: &[usize]| table[idx(x)];
        let g = |x: &[usize]| {
            let flipped: Vec<usize> = x.iter().map(|b| 1 - b).collect();
            1 - table[idx(&flipped)]
        };
        let or_like = |h: &dyn Fn(&[usize]) -> usize| {
            let zero = vec![0; d];
            let units: Vec<Vec<usize>> = (0..d).map(|k| (0..d).map(|i| usize::from(i == k)).collect()).collect();
            let v = eval(h, &units[0]);
            eval(h, &zero) != v && units.iter().all(|u| eval(h, u) == v)
        };
        BooleanClass {
            or_like: or_like(&f),
            and_like: or_like(&g),
            constant: table.iter().all(|v| *v == table[0]),
        }
    }

    #[test]
    fn classify_matches_brute_force() {
        for d in 2..=3 {
            let n = 1usize << d;
            for code in 0..(1usize << n) {
                let table: Vec<usize> = (0..n).map(|i| (code >> i) & 1).collect();
                assert_eq!(classify_boolean(&table, d).unwrap(), brute_class(&table, d), "d={d} code={code}");
            }
        }
    }

    #[test]
    fn lyapunov_examples() {
        let p = 0.3;
        let skl = skl_raw(&[0.7, 0.3], &[0.3, 0.7]);
        assert!((lyapunov_phi(p, 1.0 - p, 0.0).unwrap() - skl.ln()).abs() < 1e-15);
        let v = lyapunov_phi(0.3, 0.7, 0.1).unwrap();
        let expect = (0.8 * (7.0f64 / 3.0).ln()).ln() + 0.2 * 2f64.ln();
        assert!((v - expect).abs() < 1e-12);
        assert!((v - -0.250_217_096).abs() < 1e-8);
        assert!(lyapunov_phi(0.3, 0.71, 0.2).unwrap() > lyapunov_phi(0.3, 0.71, 0.1).unwrap());
        assert!(lyapunov_phi(0.0, 0.5, 0.1).is_err());
        assert!(lyapunov_phi(0.4, 0.4, 0.1).is_err());
    }

    #[test]
    fn sdpi_scan_binary() {
        let scan = restricted_sdpi_scan(2, 2, 0.1, 0.05).unwrap();
        assert_eq!(scan.functions, 16);
        assert!(scan.eta_hat < 1.0 - 1e-3, "{}", scan.eta_hat);
        assert!(scan.eta_hat > 0.5);
        assert!(scan.p.min_prob() >= 0.1 - 1e-12 && scan.q.min_prob() >= 0.1 - 1e-12);
        let again = restricted_sdpi_scan(2, 2, 0.1, 0.05).unwrap();
        assert_eq!(scan, again);
    }

    #[test]
    fn sdpi_scan_higher_arity_and_budget() {
        let scan = restricted_sdpi_scan(3, 2, 0.1, 0.1).unwrap();
        assert_eq!(scan.functions, 256);
        assert!(scan.eta_hat < 1.0);
        assert!(matches!(
            restricted_sdpi_scan_with_budget(2, 2, 0.1, 0.05, 100),
            Err(Error::Budget { .. })
        ));
    }

    #[test]
    fn simplex_grid_counts() {
        let g = simplex_grid(2, 0.1, 0.05);
        assert_eq!(g.len(), 17);
        assert!(g.iter().all(|p| p.iter().all(|x| *x >= 0.1 - 1e-12)));
        assert_eq!(simplex_grid(3, 0.0, 0.5).len(), 6);
    }

    #[test]
    fn cycling_rule_cases() {
        assert_eq!(cycling_rule(&[0, 0]), 0);
        assert_eq!(cycling_rule(&[0, 1]), 1);
        assert_eq!(cycling_rule(&[1, 2]), 2);
        assert_eq!(cycling_rule(&[2, 0]), 0);
        assert_eq!(cycling_rule(&[2, 1, 0]), 0);
        assert_eq!(cycling_rule(&[2, 1, 2]), 2);
    }

    #[test]
    fn cycling_symmetric_start() {
        let params = make_params(2, 0.1).unwrap();
        let bary = FiniteDist::uniform(3);
        let start = CondPair::new(bary.clone(), bary.clone()).unwrap();
        let traj = cycling_demo(&params, 50, &start).unwrap().trajectory;
        for r in &traj.records {
            assert_eq!(r.skl, 0.0);
            for (a, b) in r.pair.plus.probs().iter().zip(bary.probs()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let tilted = FiniteDist::new(vec![0.3, 0.33, 0.37]).unwrap();
        let traj = cycling_demo(&params, 50, &CondPair::new(tilted.clone(), tilted).unwrap())
            .unwrap()
            .trajectory;
        assert!(traj.records.iter().all(|r| r.skl == 0.0));
    }

    #[test]
    fn cycling_log_recursion_matches_direct() {
        let params = make_params(2, 0.2).unwrap();
        let plus = FiniteDist::new(vec![0.34, 0.33, 0.33]).unwrap();
        let minus = FiniteDist::new(vec![0.33, 0.34, 0.33]).unwrap();
        let start = CondPair::new(plus.clone(), minus.clone()).unwrap();
        let run = cycling_demo(&params, 40, &start).unwrap();
        let table = crate::scheme::tabulate(3, 2, cycling_rule);
        let scheme = ReconstructionScheme::new(
            3,
            2,
            [plus.probs().to_vec(), minus.probs().to_vec()],
            vec![LevelRule::Table(table)],
            false,
        )
        .unwrap();
        let direct = evolve_pair(&params, &scheme, None, 40).unwrap();
        for (a, b) in run.trajectory.records.iter().zip(&direct.records) {
            for (x, y) in a.pair.plus.probs().iter().zip(b.pair.plus.probs()) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!((a.boundary_dist.ln() - run.log_boundary_dist[a.level]).abs() < 1e-6 || a.boundary_dist < 1e-300);
        }
    }

    #[test]
    fn cycling_approaches_boundary_without_reaching_it() {
        let params = make_params(2, 0.1).unwrap();
        let start = CondPair::new(
            FiniteDist::new(vec![0.34, 0.33, 0.33]).unwrap(),
            FiniteDist::new(vec![0.33, 0.34, 0.33]).unwrap(),
        )
        .unwrap();
        let run = cycling_demo(&params, 2000, &start).unwrap();
        assert!(run.log_boundary_dist.iter().all(|v| v.is_finite()));
        let m = run.running_min();
        assert!(m.windows(2).all(|w| w[1] <= w[0]));
        assert!(m[2000] < m[0] - 100.0);
    }

    #[test]
    fn cycling_rejects_boundary_start() {
        let params = make_params(2, 0.1).unwrap();
        let edge = FiniteDist::new(vec![0.5, 0.5, 0.0]).unwrap();
        assert!(cycling_demo(&params, 5, &CondPair::new(edge.clone(), edge).unwrap()).is_err());
    }

    fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect()
        })
    }

    fn random_scheme(l: usize, d: usize) -> impl Strategy<Value = ReconstructionScheme> {
        let n = l.pow(d as u32);
        (
            dist(l),
            dist(l),
            proptest::collection::vec(proptest::collection::vec(0..l, n), 1..3),
            any::<bool>(),
        )
            .prop_map(move |(a, b, tables, cycle)| {
                let levels = tables.into_iter().map(LevelRule::Table).collect();
                ReconstructionScheme::new(l, d, [a, b], levels, cycle).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn data_processing_and_apriori_bound(
            scheme in (2usize..=4, 2usize..=3).prop_flat_map(|(l, d)| random_scheme(l, d)),
            eps in 0.25f64..0.49,
        ) {
            let params = make_params(scheme.d(), eps).unwrap();
            let traj = evolve_pair(&params, &scheme, None, 8).unwrap();
            let bound = scheme.d() as f64 * 3f64.ln() + 1e-9;
            for r in &traj.records[1..] {
                prop_assert!(r.skl <= r.pre_skl + 1e-10);
                prop_assert!(r.skl <= bound);
                let s: f64 = r.pair.plus.probs().iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn noisy_contraction(scheme in random_scheme(4, 2), delta in 0.05f64..0.5) {
            // 8 nu^2 (1 - delta) = 0.9
            let nu = (0.9 / (8.0 * (1.0 - delta))).sqrt();
            prop_assume!(nu < 0.5);
            let params = make_params(2, 0.5 - nu).unwrap();
            let ch = NoiseChannel::mixture(delta, &FiniteDist::uniform(4)).unwrap();
            let traj = evolve_pair(&params, &scheme, Some(&ch), 10).unwrap();
            let factor = params.ks_factor() * (1.0 - delta);
            for w in traj.records[1..].windows(2) {
                if w[0].skl > 0.0 {
                    prop_assert!(w[1].skl / w[0].skl <= factor + 1e-9);
                }
            }
        }
    }
}
