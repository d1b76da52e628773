//! The `treecast` command line.
//!
//! Every subcommand writes one CSV (default) or JSON document to `--out`, or
//! to stdout when no path is given. Exit codes: 0 success, 1 I/O failure,
//! 2 usage error, 3 invalid parameters, 4 resource budget exceeded.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use treecast_core::dynamics::DEFAULT_TUPLE_BUDGET;
use treecast_core::seed::derive_seed;
use treecast_core::*;

pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;

pub const KS_HEADER: &str = "depth,skl,ratio";
pub const SCAN_HEADER: &str = "epsilon,L,depth,sigma2,skl,tv,w2_gauss";
pub const CYCLE_HEADER: &str = "level,skl,tv,hell2,sigma2,boundary_dist,log_boundary_dist";
pub const NONGAUSS_HEADER: &str = "atoms,variance,nongaussianness,sigma_star,entropy,entropy_floor";

#[derive(Parser, Debug)]
#[command(name = "treecast", version, about = "Broadcasting on trees: exact dynamics, BP density evolution, quantized BP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Output file (stdout when omitted)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads; TREECAST_THREADS takes precedence
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
struct EpsArgs {
    #[arg(long, allow_negative_numbers = true, required_unless_present = "eps_min")]
    epsilon: Option<f64>,
    #[arg(long, requires_all = ["eps_max", "eps_steps"], conflicts_with = "epsilon")]
    eps_min: Option<f64>,
    #[arg(long, requires = "eps_min")]
    eps_max: Option<f64>,
    #[arg(long, requires = "eps_min")]
    eps_steps: Option<usize>,
}

impl EpsArgs {
    fn is_range(&self) -> bool {
        self.eps_min.is_some()
    }

    fn points(&self) -> Result<Vec<f64>> {
        match (self.epsilon, self.eps_min, self.eps_max, self.eps_steps) {
            (Some(e), _, _, _) => Ok(vec![e]),
            (None, Some(lo), Some(hi), Some(n)) => {
                if n == 0 || !(hi >= lo) {
                    return Err(Error::Domain(format!("bad epsilon range [{lo}, {hi}] with {n} steps")));
                }
                if n == 1 {
                    return Ok(vec![lo]);
                }
                Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
            }
            _ => Err(Error::Domain("give --epsilon or --eps-min/--eps-max/--eps-steps".into())),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact SKL of the root given all leaves, depth by depth
    KsDecay {
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 4)]
        max_depth: usize,
    },
    /// Exact pair dynamics of a reconstruction scheme
    Evolve {
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[command(flatten)]
        eps: EpsArgs,
        #[arg(long)]
        depth: usize,
        /// Scheme definition (JSON)
        #[arg(long)]
        scheme: PathBuf,
        /// Per-edge noise, e.g. `mixture:0.2` (uniform noise law)
        #[arg(long)]
        channel: Option<String>,
    },
    /// Population dynamics for the BP score law
    Density {
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[command(flatten)]
        eps: EpsArgs,
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value_t = 100_000)]
        pool: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exact recursion of L-level quantized BP (binary tree)
    Qbp {
        #[command(flatten)]
        eps: EpsArgs,
        #[arg(long = "L")]
        l: usize,
        #[arg(long)]
        depth: usize,
    },
    /// Bisect the largest epsilon at which quantized BP survives, per L
    Scan {
        #[arg(long = "L-list", value_delimiter = ',', required = true)]
        l_list: Vec<usize>,
        /// Probe depth of each survival test
        #[arg(long, default_value_t = 400)]
        depth: usize,
        #[arg(long, default_value_t = 1e-10)]
        survive_tol: f64,
        #[arg(long, default_value_t = 1e-6)]
        bisect_tol: f64,
    },
    /// Exhaustive restricted SDPI scan over all tables
    Sdpi {
        #[arg(long, default_value_t = 2)]
        d: usize,
        /// Alphabet size
        #[arg(long = "L", default_value_t = 2)]
        l: usize,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
    },
    /// The three-symbol intransitive rule
    Cycle {
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 10_000)]
        depth: usize,
    },
    /// Non-Gaussianness of an atomic law read from a `value,weight` CSV
    Nongauss {
        #[arg(long)]
        input: PathBuf,
        /// Rescale to unit variance first
        #[arg(long)]
        standardize: bool,
    },
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let threads = match thread_count(cli.common.threads) {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
    };
    let result = pool.install(|| execute(&cli.command, cli.common.format)).and_then(|text| emit(&cli.common.out, &text));
    match result {
        Ok(()) => 0,
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            EXIT_IO
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Budget { .. } => EXIT_BUDGET,
                _ => EXIT_DOMAIN,
            }
        }
    }
}

fn thread_count(flag: Option<usize>) -> std::result::Result<Option<usize>, String> {
    match std::env::var("TREECAST_THREADS") {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("TREECAST_THREADS={v:?} is not a positive integer")),
        },
        _ => match flag {
            Some(0) => Err("--threads must be positive".into()),
            f => Ok(f),
        },
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> std::result::Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cmd: &Command, format: Format) -> std::result::Result<String, Failure> {
    match cmd {
        Command::KsDecay { d, epsilon, max_depth } => ks_decay(*d, *epsilon, *max_depth, format),
        Command::Evolve { d, eps, depth, scheme, channel } => {
            let text = std::fs::read_to_string(scheme).map_err(|e| Failure::Io(format!("{}: {e}", scheme.display())))?;
            let scheme = ReconstructionScheme::from_json(&text)?;
            let channel = channel.as_deref().map(|c| parse_channel(c, scheme.alphabet())).transpose()?;
            evolve(*d, eps, *depth, &scheme, channel.as_ref(), format)
        }
        Command::Density { d, eps, depth, pool, seed } => density(*d, eps, *depth, *pool, *seed, format),
        Command::Qbp { eps, l, depth } => qbp(eps, *l, *depth, format),
        Command::Scan { l_list, depth, survive_tol, bisect_tol } => scan(l_list, *depth, *survive_tol, *bisect_tol, format),
        Command::Sdpi { d, l, gamma, step } => sdpi(*d, *l, *gamma, *step, format),
        Command::Cycle { d, epsilon, depth } => cycle(*d, *epsilon, *depth, format),
        Command::Nongauss { input, standardize } => {
            let text = std::fs::read_to_string(input).map_err(|e| Failure::Io(format!("{}: {e}", input.display())))?;
            nongauss(&text, *standardize, format)
        }
    }
}

/// `mixture:<delta>` with uniform noise law.
fn parse_channel(spec: &str, alphabet: usize) -> Result<NoiseChannel> {
    let delta = spec
        .strip_prefix("mixture:")
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| Error::Parse(format!("channel {spec:?}: expected mixture:<delta>")))?;
    NoiseChannel::mixture(delta, &FiniteDist::uniform(alphabet))
}

/// Empty field for values that are undefined or were not computed.
fn field(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn to_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

/// Distance to a Gaussian of the unconditional law rescaled to unit variance.
fn standardized_nongaussianness(law: &AtomicDist) -> f64 {
    let var = law.variance();
    if !(var > 0.0) {
        return f64::NAN;
    }
    match law.scaled(1.0 / var.sqrt()) {
        Ok(z) => nongaussianness(&z).value,
        Err(_) => f64::NAN,
    }
}

struct ScanRecord {
    epsilon: f64,
    l: Option<usize>,
    depth: usize,
    sigma2: f64,
    skl: f64,
    tv: f64,
    w2_gauss: f64,
}

impl ScanRecord {
    fn from_level(epsilon: f64, l: Option<usize>, r: &LevelRecord) -> Self {
        Self {
            epsilon,
            l,
            depth: r.level,
            sigma2: r.sigma2,
            skl: r.skl,
            tv: r.tv,
            w2_gauss: standardized_nongaussianness(posterior_scores(&r.pair).atoms()),
        }
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epsilon,
            self.l.map(|l| l.to_string()).unwrap_or_default(),
            self.depth,
            field(self.sigma2),
            field(self.skl),
            field(self.tv),
            field(self.w2_gauss)
        )
    }

    fn json(&self) -> Value {
        json!({
            "epsilon": self.epsilon,
            "L": self.l,
            "depth": self.depth,
            "sigma2": num(self.sigma2),
            "skl": num(self.skl),
            "tv": num(self.tv),
            "w2_gauss": num(self.w2_gauss),
        })
    }
}

fn scan_output(rows: &[ScanRecord], format: Format) -> String {
    match format {
        Format::Csv => {
            let mut out = format!("{SCAN_HEADER}\n");
            for r in rows {
                out.push_str(&r.csv_row());
                out.push('\n');
            }
            out
        }
        Format::Json => to_text(&Value::Array(rows.iter().map(ScanRecord::json).collect())),
    }
}

fn trajectory_json(traj: &PairTrajectory) -> Value {
    Value::Array(
        traj.records
            .iter()
            .map(|r| {
                json!({
                    "level": r.level,
                    "skl": num(r.skl),
                    "tv": num(r.tv),
                    "hell2": num(r.hell2),
                    "sigma2": num(r.sigma2),
                    "boundary_dist": num(r.boundary_dist),
                    "plus": r.pair.plus.probs(),
                    "minus": r.pair.minus.probs(),
                })
            })
            .collect(),
    )
}

fn ks_decay(d: usize, epsilon: f64, max_depth: usize, format: Format) -> std::result::Result<String, Failure> {
    let params = make_params(d, epsilon)?;
    if max_depth < 1 {
        return Err(Error::Domain("max depth must be at least 1".into()).into());
    }
    let skl = (1..=max_depth)
        .map(|n| brute_force_tree(&params, n).map(|b| b.skl))
        .collect::<Result<Vec<f64>>>()?;
    let ratio = |n: usize| if n == 0 { f64::NAN } else { skl[n] / skl[n - 1] };
    Ok(match format {
        Format::Csv => {
            let mut out = format!("{KS_HEADER}\n");
            for (i, s) in skl.iter().enumerate() {
                let _ = writeln!(out, "{},{},{}", i + 1, s, field(ratio(i)));
            }
            out
        }
        Format::Json => to_text(&json!({
            "d": d,
            "epsilon": epsilon,
            "ks_factor": params.ks_factor(),
            "rows": (0..skl.len()).map(|i| json!({"depth": i + 1, "skl": skl[i], "ratio": num(ratio(i))})).collect::<Vec<_>>(),
        })),
    })
}

fn evolve(
    d: usize,
    eps: &EpsArgs,
    depth: usize,
    scheme: &ReconstructionScheme,
    channel: Option<&NoiseChannel>,
    format: Format,
) -> std::result::Result<String, Failure> {
    let points = eps.points()?;
    let run = |e: f64| -> Result<PairTrajectory> {
        let params = make_params(d, e)?;
        evolve_pair_with_budget(&params, scheme, channel, depth, DEFAULT_TUPLE_BUDGET)
    };
    if !eps.is_range() {
        let traj = run(points[0])?;
        return Ok(match format {
            Format::Csv => traj.to_csv(),
            Format::Json => to_text(&trajectory_json(&traj)),
        });
    }
    let rows = par_map(&points, |e| run(e).map(|t| ScanRecord::from_level(e, Some(scheme.alphabet()), t.last())))?;
    Ok(scan_output(&rows, format))
}

fn par_map<T: Send>(points: &[f64], f: impl Fn(f64) -> Result<T> + Sync) -> Result<Vec<T>> {
    use rayon::prelude::*;
    points.par_iter().map(|e| f(*e)).collect()
}

fn density(d: usize, eps: &EpsArgs, depth: usize, pool: usize, seed: u64, format: Format) -> std::result::Result<String, Failure> {
    let points = eps.points()?;
    if !eps.is_range() {
        let report = density_evolution(&make_params(d, points[0])?, depth, pool, seed)?;
        return Ok(match format {
            Format::Csv => report.to_csv(),
            Format::Json => to_text(&density_json(&report)),
        });
    }
    // every point gets its own stream: results do not depend on the range layout
    let opts = DensityOptions { w2_levels: W2Levels::Terminal, ..DensityOptions::default() };
    let rows = points
        .iter()
        .map(|&e| {
            let point_seed = derive_seed(seed, &[e.to_bits()]);
            let report = density_evolution_with(&make_params(d, e)?, depth, pool, point_seed, &opts)?;
            let last = report.last();
            Ok(ScanRecord {
                epsilon: e,
                l: None,
                depth: last.level,
                sigma2: last.sigma2,
                skl: f64::NAN,
                tv: f64::NAN,
                w2_gauss: last.w2_gauss,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scan_output(&rows, format))
}

fn density_json(report: &DensityEvolutionReport) -> Value {
    json!({
        "xi_hat": report.xi_hat,
        "mgf_grid": report.mgf_grid,
        "pool": report.pool.samples().len(),
        "seed": report.pool.seed(),
        "records": report.records.iter().map(|r| json!({
            "level": r.level,
            "sigma2": r.sigma2,
            "stderr_sigma2": num(r.stderr_sigma2),
            "mu4": r.mu4,
            "stderr_mu4": num(r.stderr_mu4),
            "w2_gauss": num(r.w2_gauss),
            "stderr_w2": num(r.stderr_w2),
            "mgf": r.mgf,
            "stderr_mgf": r.stderr_mgf.iter().map(|v| num(*v)).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}

fn qbp(eps: &EpsArgs, l: usize, depth: usize, format: Format) -> std::result::Result<String, Failure> {
    let points = eps.points()?;
    if !eps.is_range() {
        let config = QbpConfig::new(l, points[0])?;
        let run = qbp_evolve(&config, depth)?;
        return Ok(match format {
            Format::Csv => run.to_csv(),
            Format::Json => to_text(&json!({
                "L": l,
                "epsilon": config.epsilon(),
                "lambda": config.lambda(),
                "A": config.a(),
                "B": config.b(),
                "L_min": config.l_min(),
                "sigma2": run.sigma2,
            })),
        });
    }
    let rows = par_map(&points, |e| {
        let run = qbp_evolve(&QbpConfig::new(l, e)?, depth)?;
        Ok(ScanRecord::from_level(e, Some(l), run.trajectory.last()))
    })?;
    Ok(scan_output(&rows, format))
}

fn scan(l_list: &[usize], depth: usize, survive_tol: f64, bisect_tol: f64, format: Format) -> std::result::Result<String, Failure> {
    let table = threshold_scan(l_list, depth, survive_tol, bisect_tol)?;
    Ok(match format {
        Format::Csv => table.to_csv(),
        Format::Json => {
            let fit = powerlaw_fit(&table).ok();
            to_text(&json!({
                "rows": table.rows.iter().map(|r| json!({
                    "L": r.l,
                    "eps_of_L": r.eps_of_l,
                    "eps_c": r.eps_c,
                    "gap": r.gap(),
                    "iters": r.iters,
                    "sigma2_probe": num(r.sigma2_probe),
                })).collect::<Vec<_>>(),
                "fit": fit.map(|f| json!({"slope": f.slope, "intercept": f.intercept, "r2": f.r2})),
            }))
        }
    })
}

fn sdpi(d: usize, l: usize, gamma: f64, step: f64, format: Format) -> std::result::Result<String, Failure> {
    let s = restricted_sdpi_scan(d, l, gamma, step)?;
    Ok(match format {
        Format::Csv => {
            let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
            let table = s.table.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ");
            format!(
                "eta_hat,table,p,q,functions,pairs\n{},{},{},{},{},{}\n",
                s.eta_hat,
                table,
                join(s.p.probs()),
                join(s.q.probs()),
                s.functions,
                s.pairs
            )
        }
        Format::Json => to_text(&json!({
            "eta_hat": s.eta_hat,
            "table": s.table,
            "p": s.p.probs(),
            "q": s.q.probs(),
            "functions": s.functions,
            "pairs": s.pairs,
        })),
    })
}

fn cycle(d: usize, epsilon: f64, depth: usize, format: Format) -> std::result::Result<String, Failure> {
    let params = make_params(d, epsilon)?;
    let start = CondPair::new(FiniteDist::new(vec![0.34, 0.33, 0.33])?, FiniteDist::new(vec![0.33, 0.34, 0.33])?)?;
    let run = cycling_demo(&params, depth, &start)?;
    Ok(match format {
        Format::Csv => {
            let body = run.trajectory.to_csv();
            let mut out = format!("{CYCLE_HEADER}\n");
            for (line, lb) in body.lines().skip(1).zip(&run.log_boundary_dist) {
                let _ = writeln!(out, "{line},{lb}");
            }
            out
        }
        Format::Json => to_text(&json!({
            "trajectory": trajectory_json(&run.trajectory),
            "log_boundary_dist": run.log_boundary_dist,
        })),
    })
}

fn parse_atoms(text: &str) -> Result<AtomicDist> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.chars().any(|c| c.is_ascii_alphabetic())) {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let value = cols.next().and_then(|v| v.parse::<f64>().ok());
        let weight = match cols.next() {
            Some(w) => w.parse::<f64>().ok(),
            None => Some(1.0),
        };
        match (value, weight) {
            (Some(v), Some(w)) => pairs.push((v, w)),
            _ => return Err(Error::Parse(format!("line {}: expected value[,weight]", i + 1))),
        }
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    if pairs.is_empty() || !(total > 0.0) {
        return Err(Error::Domain("empty distribution".into()));
    }
    AtomicDist::from_pairs(pairs.into_iter().map(|(v, w)| (v, w / total)))
}

fn nongauss(text: &str, standardize: bool, format: Format) -> std::result::Result<String, Failure> {
    let mut law = parse_atoms(text)?;
    if standardize {
        let var = law.variance();
        if !(var > 0.0) {
            return Err(Error::Domain("cannot standardize a point mass".into()).into());
        }
        law = law.scaled(1.0 / var.sqrt())?;
    }
    let ng = nongaussianness(&law);
    let h = entropy(&law);
    let floor = 0.5 * (-h).exp();
    Ok(match format {
        Format::Csv => format!(
            "{NONGAUSS_HEADER}\n{},{},{},{},{},{}\n",
            law.len(),
            law.variance(),
            ng.value,
            ng.sigma_star,
            h,
            floor
        ),
        Format::Json => to_text(&json!({
            "atoms": law.len(),
            "variance": law.variance(),
            "nongaussianness": ng.value,
            "sigma_star": ng.sigma_star,
            "entropy": h,
            "entropy_floor": floor,
        })),
    })
}
