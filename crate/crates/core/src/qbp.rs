//! L-level quantized belief propagation on the binary tree: each node
//! computes the exact two-child posterior from the quantized child messages
//! and rounds it into one of `L` equal intervals of `[-1, 1]`.
//!
//! Symbols are `1..=L` in the public API and `0..L` inside [`CondPair`]s.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dynamics::{renormalize, LevelRecord, PairTrajectory};
use crate::error::{Error, Result};
use crate::metrics::skl_raw;
use crate::model::{critical_epsilon, mix_raw, CondPair, FiniteDist};

/// Largest alphabet [`qbp_evolve`] accepts.
pub const MAX_QBP_ALPHABET: usize = 4096;

/// Parameters of the quantized scheme and the constants of its invariant
/// interval `[A, B]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QbpConfig {
    l: usize,
    epsilon: f64,
    lambda: f64,
    delta0: f64,
    a: f64,
    b: f64,
    l_min: f64,
}

impl QbpConfig {
    /// Leaves see their label through a binary symmetric channel whose
    /// output has second moment `A`.
    pub fn new(l: usize, epsilon: f64) -> Result<Self> {
        if l < 2 {
            return Err(Error::domain(format!("alphabet must have at least 2 symbols, got {l}")));
        }
        if !(0.0..0.5).contains(&epsilon) {
            return Err(Error::domain(format!("epsilon = {epsilon} outside [0, 1/2)")));
        }
        let lambda = 2f64.sqrt() * (1.0 - 2.0 * epsilon);
        if !(lambda > 1.0) {
            return Err(Error::domain(format!(
                "quantized BP needs lambda > 1, got {lambda} (epsilon >= {})",
                critical_epsilon(2)
            )));
        }
        let a = 2.0 * (lambda - 1.0) / lambda.powi(3);
        let b = 4.0 * (lambda * lambda - 1.0) / lambda.powi(4);
        Ok(Self {
            l,
            epsilon,
            lambda,
            delta0: 0.5 * (1.0 - a.sqrt()),
            a,
            b,
            l_min: lambda.powi(3) / (2.0 * (lambda - 1.0).powi(2)),
        })
    }

    /// The configuration whose `lambda = sqrt(2) (1 - 2 epsilon)` equals `lambda`.
    pub fn from_lambda(l: usize, lambda: f64) -> Result<Self> {
        Self::new(l, 0.5 * (1.0 - lambda / 2f64.sqrt()))
    }

    /// Replaces the leaf flip probability.
    pub fn with_leaf_flip(mut self, delta0: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&delta0) {
            return Err(Error::domain(format!("leaf flip {delta0} outside [0, 1/2)")));
        }
        self.delta0 = delta0;
        Ok(self)
    }

    pub fn l(&self) -> usize {
        self.l
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn delta0(&self) -> f64 {
        self.delta0
    }
    /// `2 (lambda - 1) / lambda^3`.
    pub fn a(&self) -> f64 {
        self.a
    }
    /// `4 (lambda^2 - 1) / lambda^4`.
    pub fn b(&self) -> f64 {
        self.b
    }
    /// `lambda^3 / (2 (lambda - 1)^2)`.
    pub fn l_min(&self) -> f64 {
        self.l_min
    }
}

/// Interval index in `1..=L` of `score`, where symbol `k` covers
/// `[2(k-1)/L - 1, 2k/L - 1]`. A boundary point goes to the neighbouring
/// interval closer to 0; `0` itself with `L` even goes to `L/2`.
pub fn quantize_symmetric(score: f64, l: usize) -> Result<usize> {
    if l < 2 {
        return Err(Error::domain("alphabet must have at least 2 symbols"));
    }
    if !(score.abs() <= 1.0) {
        return Err(Error::domain(format!("score {score} outside [-1, 1]")));
    }
    Ok(quantize(score, l))
}

/// Scores this close to 0 count as the tie at 0, so that mirror pairs of
/// child symbols whose posteriors cancel up to rounding are treated alike.
const TIE_TOL: f64 = 1e-12;

fn quantize(score: f64, l: usize) -> usize {
    if score.abs() < TIE_TOL {
        return l.div_ceil(2);
    }
    let positive = |s: f64| {
        let u = 0.5 * (1.0 + s) * l as f64;
        let r = u.round();
        let u = if (u - r).abs() < 1e-9 { r } else { u };
        (u.ceil() as usize).clamp(1, l)
    };
    if score > 0.0 {
        positive(score)
    } else {
        l + 1 - positive(-score)
    }
}

/// Output of [`qbp_evolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct QbpRun {
    pub config: QbpConfig,
    /// `sigma_n^2` for `n = 0..=depth`.
    pub sigma2: Vec<f64>,
    /// Second moment of the unquantized two-child posterior; `NaN` at `n = 0`.
    pub hat_sigma2: Vec<f64>,
    pub trajectory: PairTrajectory,
}

pub const QBP_HEADER: &str = "level,sigma2";

impl QbpRun {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(QBP_HEADER);
        out.push('\n');
        for (n, s) in self.sigma2.iter().enumerate() {
            let _ = writeln!(out, "{n},{s}");
        }
        out
    }
}

/// Runs the exact recursion of the quantized scheme for `depth` levels.
pub fn qbp_evolve(config: &QbpConfig, depth: usize) -> Result<QbpRun> {
    let l = config.l;
    if l > MAX_QBP_ALPHABET {
        return Err(Error::Budget {
            needed: (l * l) as u128,
            limit: (MAX_QBP_ALPHABET * MAX_QBP_ALPHABET) as u128,
        });
    }
    let nu = 0.5 - config.epsilon;
    let mut plus = vec![0.0; l];
    let mut minus = vec![0.0; l];
    plus[l - 1] = 1.0 - config.delta0;
    plus[0] += config.delta0;
    minus[0] = 1.0 - config.delta0;
    minus[l - 1] += config.delta0;

    let mut records = Vec::with_capacity(depth + 1);
    let mut sigma2 = Vec::with_capacity(depth + 1);
    let mut hat_sigma2 = Vec::with_capacity(depth + 1);
    let first = record(0, &plus, &minus, f64::NAN);
    sigma2.push(first.sigma2);
    hat_sigma2.push(f64::NAN);
    records.push(first);
    for level in 1..=depth {
        let mp = mix_raw(&plus, &minus, nu);
        let mm = mix_raw(&minus, &plus, nu);
        let (np, nm, hat) = quantized_step(&mp, &mm, l);
        let rec = record(level, &np, &nm, 2.0 * skl_raw(&mp, &mm));
        sigma2.push(rec.sigma2);
        hat_sigma2.push(hat);
        records.push(rec);
        plus = np;
        minus = nm;
    }
    Ok(QbpRun {
        config: *config,
        sigma2,
        hat_sigma2,
        trajectory: PairTrajectory { records },
    })
}

fn record(level: usize, plus: &[f64], minus: &[f64], pre_skl: f64) -> LevelRecord {
    let pair = CondPair {
        plus: FiniteDist::from_raw_unchecked(plus.to_vec()),
        minus: FiniteDist::from_raw_unchecked(minus.to_vec()),
    };
    LevelRecord::new(level, pair, pre_skl)
}

/// One level: new `(P+, P-)` and the second moment of the unquantized score.
fn quantized_step(mp: &[f64], mm: &[f64], l: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let mut np = vec![0.0; l];
    let mut nm = vec![0.0; l];
    let mut hat = 0.0;
    let even_mid = l.is_multiple_of(2).then_some(l / 2);
    for b in 0..l {
        let (pb, qb) = (mp[b], mm[b]);
        if pb == 0.0 && qb == 0.0 {
            continue;
        }
        for c in 0..l {
            let p = pb * mp[c];
            let q = qb * mm[c];
            let total = p + q;
            if total == 0.0 {
                continue;
            }
            let s = (p - q) / total;
            hat += 0.5 * (p - q) * s;
            match (s.abs() < TIE_TOL, even_mid) {
                (true, Some(mid)) => {
                    // split the tie evenly over the two central symbols
                    np[mid - 1] += 0.5 * p;
                    np[mid] += 0.5 * p;
                    nm[mid - 1] += 0.5 * q;
                    nm[mid] += 0.5 * q;
                }
                _ => {
                    let k = quantize(s, l) - 1;
                    np[k] += p;
                    nm[k] += q;
                }
            }
        }
    }
    renormalize(&mut np);
    renormalize(&mut nm);
    (np, nm, hat)
}

/// One row of a [`ThresholdTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRow {
    pub l: usize,
    pub eps_of_l: f64,
    pub eps_c: f64,
    pub iters: usize,
    /// `sigma^2` at the probe depth for the largest surviving `epsilon` found.
    pub sigma2_probe: f64,
}

impl ThresholdRow {
    pub fn gap(&self) -> f64 {
        self.eps_c - self.eps_of_l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub rows: Vec<ThresholdRow>,
}

pub const THRESHOLD_HEADER: &str = "L,eps_of_L,eps_c,gap,iters";

impl ThresholdTable {
    /// Builds a table from `(L, eps_of_L)` points, e.g. for fitting planted laws.
    pub fn from_points(points: &[(usize, f64)]) -> Result<Self> {
        let eps_c = critical_epsilon(2);
        let mut rows: Vec<ThresholdRow> = points
            .iter()
            .map(|&(l, eps_of_l)| ThresholdRow {
                l,
                eps_of_l,
                eps_c,
                iters: 0,
                sigma2_probe: f64::NAN,
            })
            .collect();
        if rows.iter().any(|r| !(r.eps_of_l < eps_c)) {
            return Err(Error::domain("threshold rows must lie below the critical epsilon"));
        }
        rows.sort_by_key(|r| r.l);
        Ok(Self { rows })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(THRESHOLD_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.l, r.eps_of_l, r.eps_c, r.gap(), r.iters);
        }
        out
    }
}

/// Largest relative per-level decay of `sigma^2` tolerated by the survival
/// test.
pub const STABLE_REL_CHANGE: f64 = 1e-4;

/// Whether the quantized scheme with `l` symbols keeps `sigma^2` above
/// `survive_tol` and stable at `probe_depth`; also returns the final
/// `sigma^2`.
///
/// Quantized trajectories settle into small oscillations rather than a fixed
/// point, so stability compares the mean of `sigma^2` over the last quarter of
/// the run with the mean over the quarter before it: the average relative
/// decay per level must stay below [`STABLE_REL_CHANGE`].
pub fn survives(l: usize, epsilon: f64, probe_depth: usize, survive_tol: f64) -> Result<(bool, f64)> {
    if probe_depth < 8 {
        return Err(Error::domain("probe depth must be at least 8"));
    }
    let config = match QbpConfig::new(l, epsilon) {
        Ok(c) => c,
        Err(Error::Domain(_)) if epsilon > 0.0 && epsilon < 0.5 => return Ok((false, 0.0)),
        Err(e) => return Err(e),
    };
    let run = qbp_evolve(&config, probe_depth)?;
    Ok((survival_test(&run.sigma2, survive_tol), run.sigma2[probe_depth]))
}

fn survival_test(sigma2: &[f64], survive_tol: f64) -> bool {
    let depth = sigma2.len() - 1;
    let w = depth / 4;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let last = mean(&sigma2[depth + 1 - w..]);
    let prev = mean(&sigma2[depth + 1 - 2 * w..depth + 1 - w]);
    let decay = (prev - last) / (last * w as f64);
    last > survive_tol && sigma2[depth] > survive_tol && decay < STABLE_REL_CHANGE
}

/// Bisects, for each `L`, the largest `epsilon < eps_c(2)` at which the
/// quantized scheme survives.
pub fn threshold_scan(l_list: &[usize], probe_depth: usize, survive_tol: f64, bisect_tol: f64) -> Result<ThresholdTable> {
    if !(bisect_tol >= 1e-6) {
        return Err(Error::domain("bisection tolerance must be at least 1e-6"));
    }
    if let Some(l) = l_list.iter().find(|l| **l < 2) {
        return Err(Error::domain(format!("alphabet size {l} below 2")));
    }
    if let Some(l) = l_list.iter().find(|l| **l > MAX_QBP_ALPHABET) {
        return Err(Error::Budget {
            needed: (*l as u128).pow(2),
            limit: (MAX_QBP_ALPHABET as u128).pow(2),
        });
    }
    let mut ls = l_list.to_vec();
    ls.sort_unstable();
    ls.dedup();
    let eps_c = critical_epsilon(2);
    let rows: Result<Vec<ThresholdRow>> = ls
        .par_iter()
        .map(|&l| {
            let (mut lo, mut hi) = (0.0, eps_c);
            let mut iters = 0;
            let mut sigma2_probe = f64::NAN;
            while hi - lo > bisect_tol {
                let mid = 0.5 * (lo + hi);
                let (alive, s) = survives(l, mid, probe_depth, survive_tol)?;
                if alive {
                    lo = mid;
                    sigma2_probe = s;
                } else {
                    hi = mid;
                }
                iters += 1;
            }
            Ok(ThresholdRow {
                l,
                eps_of_l: 0.5 * (lo + hi),
                eps_c,
                iters,
                sigma2_probe,
            })
        })
        .collect();
    Ok(ThresholdTable { rows: rows? })
}

/// Least-squares line through `(log L, log(eps_c - eps(L)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn powerlaw_fit(table: &ThresholdTable) -> Result<PowerLawFit> {
    if table.rows.len() < 4 {
        return Err(Error::domain("power-law fit needs at least 4 rows"));
    }
    if table.rows.iter().any(|r| !(r.gap() > 0.0)) {
        return Err(Error::domain("power-law fit needs eps(L) < eps_c on every row"));
    }
    let x: Vec<f64> = table.rows.iter().map(|r| (r.l as f64).ln()).collect();
    let y: Vec<f64> = table.rows.iter().map(|r| r.gap().ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::domain("power-law fit needs at least two distinct L"));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let scale = y.iter().map(|b| b * b).sum::<f64>().max(1.0);
    let r2 = if ss_res <= 1e-24 * scale { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(PowerLawFit { slope, intercept, r2 })
}
