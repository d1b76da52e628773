//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p treecast-core --test acceptance`.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treecast_core::dynamics::default_barrier_grid;
use treecast_core::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> FiniteDist {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = v.iter().sum();
    FiniteDist::new(v.iter().map(|x| x / s).collect()).unwrap()
}

fn density_run(eps: f64, seed: u64) -> DensityEvolutionReport {
    let params = make_params(2, eps).unwrap();
    let opts = DensityOptions { w2_levels: W2Levels::Terminal, ..DensityOptions::default() };
    density_evolution_with(&params, 50, 1_000_000, seed, &opts).unwrap()
}

struct Densities {
    runs: Vec<(f64, DensityEvolutionReport)>,
}

impl Densities {
    fn get(&self, eps: f64) -> &DensityEvolutionReport {
        &self.runs.iter().find(|(e, _)| *e == eps).expect("run present").1
    }
}

fn c1() -> Outcome {
    let t = Instant::now();
    let params = make_params(2, 0.4).unwrap();
    let bound = params.ks_factor() + 1e-9;
    let skl: Vec<f64> = (1..=4).map(|n| brute_force_tree(&params, n).unwrap().skl).collect();
    let ratios: Vec<f64> = skl.windows(2).map(|w| w[1] / w[0]).collect();
    let secs = t.elapsed().as_secs_f64();
    let ok = ratios.iter().all(|r| *r <= bound) && secs < 60.0;
    outcome(ok, format!("ratios {ratios:.5?} vs {:.2}, {secs:.2}s", params.ks_factor()))
}

fn c2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let n = rng.random_range(2..=5);
        let (p, q) = (random_dist(&mut rng, n), random_dist(&mut rng, n));
        let (a, b): (f64, f64) = (rng.random_range(0.0..=0.5), rng.random_range(0.0..=0.5));
        let (delta, delta2) = (a.min(b), a.max(b));
        for kind in [DivergenceKind::Skl, DivergenceKind::Hellinger2] {
            let at = |x: f64| divergence(kind, &mixture(&p, &q, x).unwrap(), &mixture(&q, &p, x).unwrap()).unwrap();
            let lhs = at(delta);
            worst = worst.max(lhs - 4.0 * delta * delta * divergence(kind, &p, &q).unwrap());
            if delta2 > 0.0 {
                worst = worst.max(lhs - (delta / delta2).powi(2) * at(delta2));
            }
        }
    }
    outcome(worst <= 1e-10, format!("10^4 trials, SKL and H^2, worst excess {worst:.3e}"))
}

fn c3(dens: &Densities) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for eps in [0.10, 0.12, 0.14] {
        let r = dens.get(eps).last();
        let omega = omega_bound(eps).unwrap();
        ok &= r.sigma2 <= omega + 3.0 * r.stderr_sigma2;
        parts.push(format!("eps={eps}: {:.4}+-{:.1e} <= {omega:.4}", r.sigma2, r.stderr_sigma2));
    }
    let r = dens.get(0.2).last();
    ok &= r.sigma2.abs() <= 3.0 * r.stderr_sigma2;
    parts.push(format!("eps=0.2: {:.2e}+-{:.1e}", r.sigma2, r.stderr_sigma2));
    outcome(ok, parts.join("; "))
}

fn c4() -> Outcome {
    let probe = QbpConfig::from_lambda(64, 1.02).unwrap();
    let l = 64.max(probe.l_min().ceil() as usize);
    let config = QbpConfig::from_lambda(l, 1.02).unwrap();
    let run = qbp_evolve(&config, 200).unwrap();
    let (a, b) = (config.a(), config.b());
    let in_band = run.sigma2.iter().all(|s| *s >= a - 1e-9 && *s <= b + 1e-9);
    let lam = config.lambda();
    let fa = (lam * lam * a) * (1.0 - lam * lam * a / 2.0) / lam;
    let fb = (lam * lam * b) * (1.0 - lam * lam * b / 4.0);
    let ids = (fa - a).abs() <= 1e-12 && (fb - b).abs() <= 1e-12;
    let (lo, hi) = run.sigma2.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(*s), hi.max(*s)));
    outcome(
        in_band && ids,
        format!("L={l}, sigma2 in [{lo:.6}, {hi:.6}] vs [A,B]=[{a:.6}, {b:.6}], identity residuals {:.1e}, {:.1e}", fa - a, fb - b),
    )
}

fn c5() -> Outcome {
    let t = Instant::now();
    let table = threshold_scan(&[4, 8, 16, 32, 64, 128, 256], 400, 1e-10, 1e-6).unwrap();
    let eps_c = critical_epsilon(2);
    let eps: Vec<f64> = table.rows.iter().map(|r| r.eps_of_l).collect();
    let increasing = eps.windows(2).all(|w| w[1] > w[0]);
    let below = eps.iter().all(|e| *e < eps_c);
    let fit = powerlaw_fit(&table).unwrap();
    let ok = increasing && below && fit.slope < 0.0 && fit.r2 > 0.9;
    outcome(
        ok,
        format!(
            "eps(L) {eps:.5?}, slope {:.3}, r2 {:.4}, {:.1}s",
            fit.slope,
            fit.r2,
            t.elapsed().as_secs_f64()
        ),
    )
}

fn c6(dens: &Densities) -> Outcome {
    let pts: Vec<(f64, f64)> = [0.10, 0.125, 0.14]
        .iter()
        .map(|e| {
            let r = dens.get(*e).last();
            (r.w2_gauss, r.stderr_w2)
        })
        .collect();
    let ok = pts
        .windows(2)
        .all(|w| w[1].0 <= w[0].0 + 3.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt());
    outcome(ok, format!("W2 at eps 0.10/0.125/0.14: {pts:.4?}"))
}

fn c7() -> Outcome {
    let scan = restricted_sdpi_scan(2, 2, 0.1, 0.05).unwrap();
    let or = scheme::tabulate(2, 2, |x| x[0].max(x[1]));
    let ratio = skl_contraction_ratio(
        &or,
        &FiniteDist::bernoulli(1e-4).unwrap(),
        &FiniteDist::bernoulli(2e-4).unwrap(),
        2,
    )
    .unwrap();
    outcome(
        scan.eta_hat <= 1.0 - 1e-3 && ratio >= 0.99,
        format!("eta_hat {:.5} over {} functions, OR ratio {ratio:.5}", scan.eta_hat, scan.functions),
    )
}

fn c8() -> Outcome {
    let first_small = |t: &PairTrajectory| t.records.iter().find(|r| r.skl < 1e-6).map(|r| r.level);
    let maj = evolve_pair(
        &make_params(3, critical_epsilon(3) - 0.001).unwrap(),
        &ReconstructionScheme::majority(3).unwrap(),
        None,
        500,
    )
    .unwrap();
    let alt = evolve_pair(
        &make_params(2, critical_epsilon(2) - 0.005).unwrap(),
        &ReconstructionScheme::alternating_and_or(2).unwrap(),
        None,
        500,
    )
    .unwrap();
    let (na, nb) = (first_small(&maj), first_small(&alt));
    let cal = calibrate_barrier(&alt, 5, &default_barrier_grid());
    let ok = na.is_some() && nb.is_some() && cal.is_some();
    let cal_txt = cal.map_or("no monotone barrier".to_string(), |c| {
        format!("barrier lambda {} (min step {:.3e})", c.lambda, c.min_decrease)
    });
    outcome(ok, format!("majority SKL<1e-6 at level {na:?}, AND/OR at level {nb:?}, {cal_txt}"))
}

fn c9() -> Outcome {
    let delta = 0.2;
    let nu = (0.9f64 / (8.0 * (1.0 - delta))).sqrt();
    let params = make_params(2, 0.5 - nu).unwrap();
    let bound = params.ks_factor() * (1.0 - delta);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..100 {
        let levels: Vec<LevelRule> = (0..3)
            .map(|_| LevelRule::Table((0..16).map(|_| rng.random_range(0..4)).collect()))
            .collect();
        let leaf = [random_dist(&mut rng, 4).probs().to_vec(), random_dist(&mut rng, 4).probs().to_vec()];
        let scheme = ReconstructionScheme::new(4, 2, leaf, levels, true).unwrap();
        let channel = NoiseChannel::mixture(delta, &random_dist(&mut rng, 4)).unwrap();
        let skl = evolve_pair(&params, &scheme, Some(&channel), 30).unwrap().skl();
        // below ~1e-30 SKL is made of rounding in the probabilities (one ulp
        // of a coordinate, squared) and level ratios are noise
        for n in 2..skl.len() {
            if skl[n - 1] >= 1e-26 {
                worst = worst.max(skl[n] / skl[n - 1]);
                checked += 1;
            }
        }
    }
    outcome(
        worst <= bound + 1e-9,
        format!("factor {bound:.3}, worst ratio {worst:.5} over {checked} level pairs"),
    )
}

fn c10() -> Outcome {
    let mut ok = true;
    let mut checked = [0usize; 4];
    let mut worst = 0.0f64;
    for eps in [0.3, 0.35, 0.4, 0.45] {
        let params = make_params(2, eps).unwrap();
        let theta = params.theta();
        for depth in 1..=3 {
            let s = brute_force_tree(&params, depth).unwrap().scores;
            let (hat, bar) = build_hat_bar(&s, theta).unwrap();
            let w2 = wasserstein_pow(2.0, hat.atoms(), &bar).unwrap();
            let w4 = wasserstein_pow(4.0, hat.atoms(), &bar).unwrap();
            // with mu taken for S itself and for the scaled messages theta S
            let cases = [
                (2.0, s.sigma2(), w2),
                (4.0, s.mu4(), w4),
                (2.0, theta.powi(2) * s.sigma2(), w2),
                (4.0, theta.powi(4) * s.mu4(), w4),
            ];
            for (k, (p, mu, w)) in cases.into_iter().enumerate() {
                if mu <= 0.5f64.powf(1.0 + p) {
                    let b = mu * alpha_bound(p, mu).unwrap();
                    ok &= w <= b;
                    worst = worst.max(w / b);
                    checked[k] += 1;
                }
            }
        }
    }
    ok &= checked.iter().all(|c| *c > 0);
    outcome(ok, format!("cases checked {checked:?} (W2, W4; unscaled, scaled), worst W/bound {worst:.3e}"))
}

fn c11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ok = true;
    let mut worst = f64::INFINITY;
    for trial in 0..1000 {
        let l = [2usize, 4, 8, 16][trial % 4];
        let n = rng.random_range(2..=l);
        let raw: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.01..1.0))).collect();
        let total: f64 = raw.iter().map(|(_, w)| w).sum();
        let pairs: Vec<(f64, f64)> = raw.iter().map(|(v, w)| (*v, w / total)).collect();
        let z = AtomicDist::from_pairs(pairs).unwrap();
        let sd = z.variance().sqrt();
        let unit = z.scaled(1.0 / sd).unwrap();
        let e = nongaussianness(&unit).value;
        ok &= e >= 1.0 / (2.0 * l as f64) - 1e-9;
        worst = worst.min(e - 1.0 / (2.0 * l as f64));
    }
    let rad = nongaussianness(&AtomicDist::from_pairs([(-1.0, 0.5), (1.0, 0.5)]).unwrap()).value;
    let err = (rad - (1.0 - 2.0 / std::f64::consts::PI).sqrt()).abs();
    ok &= err <= 1e-6;
    outcome(ok, format!("min slack {worst:.3e}, Rademacher error {err:.1e}"))
}

fn c12(dens: &Densities) -> Outcome {
    let report = dens.get(0.14);
    let grid = &report.mgf_grid;
    let by_level = |n: usize| report.records.iter().find(|r| r.level == n).expect("level recorded");
    let mut ok = true;
    let mut worst = f64::NEG_INFINITY;
    for n in 2..=30 {
        let (prev, cur) = (by_level(n - 1), by_level(n));
        for (g, s) in grid.iter().enumerate() {
            if ![0.5, 1.0, 2.0].contains(&s.abs()) {
                continue;
            }
            let diffs: Vec<f64> = cur.mgf_replicates[g]
                .iter()
                .zip(&prev.mgf_replicates[g])
                .map(|(a, b)| a - b)
                .collect();
            let k = diffs.len() as f64;
            let mean = diffs.iter().sum::<f64>() / k;
            let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0);
            let se = (var / k).sqrt();
            ok &= mean <= 3.0 * se;
            worst = worst.max(mean / se);
        }
    }
    outcome(ok, format!("largest increase in paired standard errors {worst:.2}"))
}

fn main() {
    let t = Instant::now();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n:>2}: {}  {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    report(1, c1());
    report(2, c2());
    report(4, c4());
    report(7, c7());
    report(8, c8());
    report(9, c9());
    report(10, c10());
    report(11, c11());
    report(5, c5());
    let dens = Densities {
        runs: [0.10, 0.12, 0.125, 0.14, 0.2]
            .iter()
            .zip(1u64..)
            .map(|(e, seed)| (*e, density_run(*e, seed)))
            .collect(),
    };
    report(3, c3(&dens));
    report(6, c6(&dens));
    report(12, c12(&dens));
    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("{} of {} criteria passed in {:.1}s", results.len() - failed.len(), results.len(), t.elapsed().as_secs_f64());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
