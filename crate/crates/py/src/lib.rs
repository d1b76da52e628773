//! Python bindings: `import treecast`.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use treecast_core as core;
use treecast_core::{DivergenceKind, Error};

create_exception!(treecast, BudgetError, PyException, "A computation exceeded its size budget.");

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Budget { .. } => BudgetError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Arity, noise and the derived constants of the broadcast model.
#[pyclass(frozen, module = "treecast")]
struct ModelParams(core::ModelParams);

#[pymethods]
impl ModelParams {
    #[new]
    fn new(d: usize, epsilon: f64) -> PyResult<Self> {
        core::make_params(d, epsilon).py().map(Self)
    }
    #[getter]
    fn d(&self) -> usize {
        self.0.d()
    }
    #[getter]
    fn epsilon(&self) -> f64 {
        self.0.epsilon()
    }
    #[getter]
    fn nu(&self) -> f64 {
        self.0.nu()
    }
    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta()
    }
    #[getter]
    fn lam(&self) -> f64 {
        self.0.lambda()
    }
    #[getter]
    fn eps_c(&self) -> f64 {
        self.0.eps_c()
    }
    #[getter]
    fn ks_factor(&self) -> f64 {
        self.0.ks_factor()
    }
    fn __repr__(&self) -> String {
        format!("ModelParams(d={}, epsilon={})", self.0.d(), self.0.epsilon())
    }
}

/// A per-level reconstruction scheme; build one from JSON or a named family.
#[pyclass(frozen, module = "treecast")]
struct Scheme(core::ReconstructionScheme);

#[pymethods]
impl Scheme {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        core::ReconstructionScheme::from_json(text).py().map(Self)
    }
    #[staticmethod]
    fn majority(d: usize) -> PyResult<Self> {
        core::ReconstructionScheme::majority(d).py().map(Self)
    }
    #[staticmethod]
    fn alternating_and_or(d: usize) -> PyResult<Self> {
        core::ReconstructionScheme::alternating_and_or(d).py().map(Self)
    }
    /// Deterministic table, the same at every level, over `alphabet^d` tuples
    /// in lexicographic order.
    #[staticmethod]
    fn uniform_table(alphabet: usize, d: usize, plus: Vec<f64>, minus: Vec<f64>, table: Vec<usize>) -> PyResult<Self> {
        core::ReconstructionScheme::uniform_table(alphabet, d, [plus, minus], table).py().map(Self)
    }
    fn to_json(&self) -> String {
        self.0.to_json()
    }
    #[getter]
    fn alphabet(&self) -> usize {
        self.0.alphabet()
    }
    #[getter]
    fn d(&self) -> usize {
        self.0.d()
    }
}

fn trajectory<'py>(py: Python<'py>, t: &core::PairTrajectory) -> PyResult<Vec<Bound<'py, PyDict>>> {
    t.records
        .iter()
        .map(|r| {
            let row = PyDict::new(py);
            row.set_item("level", r.level)?;
            row.set_item("skl", r.skl)?;
            row.set_item("tv", r.tv)?;
            row.set_item("hell2", r.hell2)?;
            row.set_item("sigma2", r.sigma2)?;
            row.set_item("boundary_dist", r.boundary_dist)?;
            row.set_item("plus", r.pair.plus.probs().to_vec())?;
            row.set_item("minus", r.pair.minus.probs().to_vec())?;
            Ok(row)
        })
        .collect()
}

#[pyfunction]
fn critical_epsilon(d: usize) -> f64 {
    core::critical_epsilon(d)
}

/// Divergence between two probability vectors: `kl`, `skl`, `tv` or `hellinger2`.
#[pyfunction]
fn divergence(kind: &str, p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    let kind = match kind {
        "kl" => DivergenceKind::Kl,
        "skl" => DivergenceKind::Skl,
        "tv" => DivergenceKind::Tv,
        "hellinger2" => DivergenceKind::Hellinger2,
        other => return Err(PyValueError::new_err(format!("unknown divergence {other:?}"))),
    };
    let p = core::FiniteDist::new(p).py()?;
    let q = core::FiniteDist::new(q).py()?;
    core::divergence(kind, &p, &q).py()
}

fn atomic(values: Vec<f64>, weights: Option<Vec<f64>>) -> PyResult<core::AtomicDist> {
    match weights {
        Some(w) => {
            if w.len() != values.len() {
                return Err(PyValueError::new_err("values and weights differ in length"));
            }
            core::AtomicDist::from_pairs(values.into_iter().zip(w)).py()
        }
        None => core::AtomicDist::empirical(&values).py(),
    }
}

/// `(E, sigma_star)`: quadratic distance to the nearest centred Gaussian.
#[pyfunction]
#[pyo3(signature = (values, weights=None))]
fn nongaussianness(values: Vec<f64>, weights: Option<Vec<f64>>) -> PyResult<(f64, f64)> {
    let ng = core::nongaussianness(&atomic(values, weights)?);
    Ok((ng.value, ng.sigma_star))
}

/// `W_p` between two atomic laws given as `(values, weights)` pairs.
#[pyfunction]
fn wasserstein(p: f64, a: (Vec<f64>, Vec<f64>), b: (Vec<f64>, Vec<f64>)) -> PyResult<f64> {
    core::wasserstein(p, &atomic(a.0, Some(a.1))?, &atomic(b.0, Some(b.1))?).py()
}

#[pyfunction]
fn alpha_bound(p: f64, mu: f64) -> PyResult<f64> {
    core::alpha_bound(p, mu).py()
}

#[pyfunction]
fn omega_bound(epsilon: f64) -> PyResult<f64> {
    core::omega_bound(epsilon).py()
}

/// BP posterior score of a node from its children's scores.
#[pyfunction]
fn bp_combine(scores: Vec<f64>, theta: f64) -> PyResult<f64> {
    core::bp_combine(&scores, theta).py()
}

/// Exact SKL, TV and score law (`values`, `weights`) of a small tree.
#[pyfunction]
fn brute_force_tree<'py>(py: Python<'py>, params: &ModelParams, depth: usize) -> PyResult<Bound<'py, PyDict>> {
    let b = py.detach(|| core::brute_force_tree(&params.0, depth)).py()?;
    let out = PyDict::new(py);
    out.set_item("skl", b.skl)?;
    out.set_item("tv", b.tv)?;
    out.set_item("sigma2", b.scores.sigma2())?;
    out.set_item("values", b.scores.atoms().values().to_vec())?;
    out.set_item("weights", b.scores.atoms().weights().to_vec())?;
    Ok(out)
}

/// Exact evolution of the conditional pair under `scheme`; with `channel_delta`
/// each edge also passes a uniform-noise mixture channel.
#[pyfunction]
#[pyo3(signature = (params, scheme, depth, channel_delta=None))]
fn evolve_pair<'py>(
    py: Python<'py>,
    params: &ModelParams,
    scheme: &Scheme,
    depth: usize,
    channel_delta: Option<f64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let channel = channel_delta
        .map(|d| core::NoiseChannel::mixture(d, &core::FiniteDist::uniform(scheme.0.alphabet())))
        .transpose()
        .py()?;
    let t = py.detach(|| core::evolve_pair(&params.0, &scheme.0, channel.as_ref(), depth)).py()?;
    trajectory(py, &t)
}

/// Population dynamics; per-level `sigma2`, `stderr_sigma2`, `mu4`,
/// `w2_gauss` and `mgf` lists plus `xi_hat` and the final pool.
#[pyfunction]
#[pyo3(signature = (params, depth, pool_size=100_000, seed=0))]
fn density_evolution<'py>(py: Python<'py>, params: &ModelParams, depth: usize, pool_size: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let rep = py.detach(|| core::density_evolution(&params.0, depth, pool_size, seed)).py()?;
    let out = PyDict::new(py);
    let col = |f: fn(&core::DensityRecord) -> f64| rep.records.iter().map(f).collect::<Vec<f64>>();
    out.set_item("level", rep.records.iter().map(|r| r.level).collect::<Vec<_>>())?;
    out.set_item("sigma2", col(|r| r.sigma2))?;
    out.set_item("stderr_sigma2", col(|r| r.stderr_sigma2))?;
    out.set_item("mu4", col(|r| r.mu4))?;
    out.set_item("w2_gauss", col(|r| r.w2_gauss))?;
    out.set_item("mgf_grid", rep.mgf_grid.clone())?;
    out.set_item("mgf", rep.records.iter().map(|r| r.mgf.clone()).collect::<Vec<_>>())?;
    out.set_item("xi_hat", rep.xi_hat)?;
    out.set_item("pool", rep.pool.samples().to_vec())?;
    Ok(out)
}

/// Quantized-BP configuration and derived constants.
#[pyclass(frozen, module = "treecast")]
struct QbpConfig(core::QbpConfig);

#[pymethods]
impl QbpConfig {
    #[new]
    #[pyo3(signature = (l, epsilon=None, lam=None))]
    fn new(l: usize, epsilon: Option<f64>, lam: Option<f64>) -> PyResult<Self> {
        match (epsilon, lam) {
            (Some(e), None) => core::QbpConfig::new(l, e).py().map(Self),
            (None, Some(x)) => core::QbpConfig::from_lambda(l, x).py().map(Self),
            _ => Err(PyValueError::new_err("give exactly one of epsilon, lam")),
        }
    }
    #[getter]
    fn l(&self) -> usize {
        self.0.l()
    }
    #[getter]
    fn epsilon(&self) -> f64 {
        self.0.epsilon()
    }
    #[getter]
    fn lam(&self) -> f64 {
        self.0.lambda()
    }
    #[getter]
    fn delta0(&self) -> f64 {
        self.0.delta0()
    }
    #[getter]
    fn a(&self) -> f64 {
        self.0.a()
    }
    #[getter]
    fn b(&self) -> f64 {
        self.0.b()
    }
    #[getter]
    fn l_min(&self) -> f64 {
        self.0.l_min()
    }
    /// `sigma_n^2` for `n = 0..=depth`.
    fn evolve(&self, py: Python<'_>, depth: usize) -> PyResult<Vec<f64>> {
        py.detach(|| core::qbp_evolve(&self.0, depth)).py().map(|r| r.sigma2)
    }
}

#[pyfunction]
fn quantize_symmetric(score: f64, l: usize) -> PyResult<usize> {
    core::quantize_symmetric(score, l).py()
}

/// Rows `(L, eps_of_L, gap, iters)` of the quantized-BP threshold scan.
#[pyfunction]
#[pyo3(signature = (l_list, probe_depth=400, survive_tol=1e-10, bisect_tol=1e-6))]
fn threshold_scan(py: Python<'_>, l_list: Vec<usize>, probe_depth: usize, survive_tol: f64, bisect_tol: f64) -> PyResult<Vec<(usize, f64, f64, usize)>> {
    let t = py.detach(|| core::threshold_scan(&l_list, probe_depth, survive_tol, bisect_tol)).py()?;
    Ok(t.rows.iter().map(|r| (r.l, r.eps_of_l, r.gap(), r.iters)).collect())
}

/// `(slope, intercept, r2)` of `log gap` against `log L`.
#[pyfunction]
fn powerlaw_fit(points: Vec<(usize, f64)>) -> PyResult<(f64, f64, f64)> {
    let table = core::ThresholdTable::from_points(&points).py()?;
    let f = core::powerlaw_fit(&table).py()?;
    Ok((f.slope, f.intercept, f.r2))
}

/// Log distance to the simplex boundary, level by level, for the
/// three-symbol cycling rule.
#[pyfunction]
fn cycling_demo(py: Python<'_>, params: &ModelParams, steps: usize, plus: Vec<f64>, minus: Vec<f64>) -> PyResult<Vec<f64>> {
    let start = core::CondPair::new(core::FiniteDist::new(plus).py()?, core::FiniteDist::new(minus).py()?).py()?;
    py.detach(|| core::cycling_demo(&params.0, steps, &start)).py().map(|r| r.log_boundary_dist)
}

#[pymodule]
fn treecast(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BudgetError", m.py().get_type::<BudgetError>())?;
    m.add_class::<ModelParams>()?;
    m.add_class::<Scheme>()?;
    m.add_class::<QbpConfig>()?;
    m.add_function(wrap_pyfunction!(critical_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(divergence, m)?)?;
    m.add_function(wrap_pyfunction!(nongaussianness, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_bound, m)?)?;
    m.add_function(wrap_pyfunction!(omega_bound, m)?)?;
    m.add_function(wrap_pyfunction!(bp_combine, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_tree, m)?)?;
    m.add_function(wrap_pyfunction!(evolve_pair, m)?)?;
    m.add_function(wrap_pyfunction!(density_evolution, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_symmetric, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_scan, m)?)?;
    m.add_function(wrap_pyfunction!(powerlaw_fit, m)?)?;
    m.add_function(wrap_pyfunction!(cycling_demo, m)?)?;
    Ok(())
}
