//! Python module `pyrwre`: laws, environments, 1D formulas, exact solves,
//! rate functions and the experiment harness.
//!
//! Reports come back as plain dicts built from the JSON form of the Rust
//! report types, so field names match the `.json` files written by the
//! command line runner.

use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyMemoryError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use rwre::env_model::{BalancedWeights, Environment, EnvironmentLaw, TransitionKernel};
use rwre::error::RwreError;
use rwre::exact_quenched::{exit_probability, FiniteDomain, QuenchedField};
use rwre::harness::{execute, ExperimentConfig};
use rwre::lattice::{JumpSet, Site};
use rwre::ldp_rate::{empirical_rate, legendre_rate};
use rwre::oned::{classify, kks_exponent, velocity, VelocityBudget, VelocityMethod};
use rwre::rng::StreamKey;
use rwre::walk_sim::Walker;

create_exception!(pyrwre, NumericalError, PyException, "An iterative method or estimator failed.");

fn to_py_err(e: RwreError) -> PyErr {
    match e {
        RwreError::Resource(m) => PyMemoryError::new_err(m),
        RwreError::Numerical { .. } | RwreError::InsufficientData(_) => NumericalError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn value_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| value_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, value_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn report<'py, T: serde::Serialize>(py: Python<'py>, x: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(x).map_err(|e| PyValueError::new_err(e.to_string()))?;
    value_to_py(py, &v)
}

/// An environment law.
#[pyclass(frozen, module = "pyrwre")]
struct Law {
    inner: Arc<EnvironmentLaw>,
}

#[pymethods]
impl Law {
    /// Homogeneous 1D law with `omega(x, +1) = p`.
    #[staticmethod]
    fn homogeneous_1d(p: f64) -> PyResult<Self> {
        EnvironmentLaw::homogeneous_1d(p).map(Law::wrap).map_err(to_py_err)
    }

    /// Homogeneous law with kernel `probs` ordered `+e1, -e1, +e2, -e2, ...`.
    #[staticmethod]
    fn homogeneous(probs: Vec<f64>) -> PyResult<Self> {
        let d = probs.len() / 2;
        let k = JumpSet::new(d, probs.len() % 2 == 1).and_then(|j| TransitionKernel::new(j, &probs)).map_err(to_py_err)?;
        EnvironmentLaw::homogeneous(k).map(Law::wrap).map_err(to_py_err)
    }

    #[staticmethod]
    fn two_point(p1: f64, p2: f64) -> PyResult<Self> {
        EnvironmentLaw::two_point(p1, p2).map(Law::wrap).map_err(to_py_err)
    }

    /// 1D i.i.d. law with atoms `[(p_right, weight), ...]`.
    #[staticmethod]
    fn one_dim(atoms: Vec<(f64, f64)>) -> PyResult<Self> {
        EnvironmentLaw::one_dim_discrete(&atoms).map(Law::wrap).map_err(to_py_err)
    }

    #[staticmethod]
    fn dirichlet(dim: usize, alpha: Vec<f64>) -> PyResult<Self> {
        EnvironmentLaw::dirichlet(dim, &alpha).map(Law::wrap).map_err(to_py_err)
    }

    /// Balanced law with fixed per-axis weights (`2 sum w = 1`).
    #[staticmethod]
    fn balanced(weights: Vec<f64>) -> PyResult<Self> {
        EnvironmentLaw::balanced(weights.len(), BalancedWeights::Fixed(weights)).map(Law::wrap).map_err(to_py_err)
    }

    /// Law from config text, e.g. `"law = dirichlet\ndim = 2\nalpha = 1,1,1,1"`.
    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        let cfg = ExperimentConfig::parse(text, Some("env-report")).map_err(to_py_err)?;
        cfg.law().map(|inner| Law { inner }).map_err(to_py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn declared_kappa(&self) -> Option<f64> {
        self.inner.declared_kappa
    }

    fn is_balanced(&self) -> bool {
        self.inner.is_balanced()
    }

    fn __repr__(&self) -> String {
        format!("Law({:?})", self.inner.variant)
    }
}

impl Law {
    fn wrap(l: EnvironmentLaw) -> Self {
        Law { inner: Arc::new(l) }
    }
}

/// A realized environment; kernels are a pure function of `(seed, site)`.
#[pyclass(frozen, module = "pyrwre")]
struct Env {
    inner: Environment,
}

fn site(coords: &[i64]) -> PyResult<Site> {
    if coords.is_empty() || coords.len() > 3 {
        return Err(PyValueError::new_err("sites have 1 to 3 coordinates"));
    }
    Ok(Site::new(coords))
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (law, seed, hold = None))]
    fn new(law: &Law, seed: u64, hold: Option<f64>) -> PyResult<Self> {
        let env = Environment::from_arc(law.inner.clone(), seed);
        let env = if hold.is_some() { env.with_holding(hold).map_err(to_py_err)? } else { env };
        Ok(Env { inner: env })
    }

    /// Holding version; `hold = None` uses the declared kappa of the law.
    #[pyo3(signature = (hold = None))]
    fn with_holding(&self, hold: Option<f64>) -> PyResult<Env> {
        self.inner.with_holding(hold).map(|inner| Env { inner }).map_err(to_py_err)
    }

    fn kernel_at(&self, x: Vec<i64>) -> PyResult<Vec<f64>> {
        let k = self.inner.kernel_at(site(&x)?);
        Ok(k.probs().to_vec())
    }

    /// A path of `n` steps from the origin; positions as coordinate lists.
    fn walk(&self, n: u64, walk_seed: u64) -> Vec<Vec<i64>> {
        let d = self.inner.dim();
        let mut rng = StreamKey::new(walk_seed, "python", "walk").rng(0);
        Walker::new(&self.inner).path(Site::ORIGIN, n, &mut rng).iter().map(|s| s.coords(d).to_vec()).collect()
    }
}

/// Regime of a 1D law with its log-moment summary.
#[pyfunction]
fn classify_1d<'py>(py: Python<'py>, law: &Law) -> PyResult<Bound<'py, PyAny>> {
    let c = classify(&law.inner).map_err(to_py_err)?;
    report(py, &c)
}

#[pyfunction]
fn kks_kappa(law: &Law) -> PyResult<f64> {
    kks_exponent(&law.inner).map(|k| k.kks_kappa).map_err(to_py_err)
}

/// 1D velocity by `method` in `{"solomon", "series", "direct", "renewal"}`.
#[pyfunction]
#[pyo3(signature = (law, method, n = 100_000, replicas = 500, seed = 0))]
fn velocity_1d<'py>(py: Python<'py>, law: &Law, method: &str, n: u64, replicas: u64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let m = match method {
        "solomon" => VelocityMethod::SolomonOracle,
        "series" => VelocityMethod::SeriesFormula { j: 60 },
        "direct" => VelocityMethod::DirectMc,
        "renewal" => VelocityMethod::RenewalMc,
        other => return Err(PyValueError::new_err(format!("unknown method `{other}`"))),
    };
    let b = VelocityBudget { n, replicas, window: 2_000 };
    let r = velocity(&law.inner, m, &b, &StreamKey::new(seed, "python", method)).map_err(to_py_err)?;
    report(py, &r)
}

/// Quenched probability that the 1D walk from `start` leaves `(a, b)` at `b`.
#[pyfunction]
fn exit_right_probability(env: &Env, a: i64, b: i64, start: i64) -> PyResult<f64> {
    let dom = Arc::new(FiniteDomain::interval(a, b).map_err(to_py_err)?);
    let field = QuenchedField::from_env(dom, &env.inner);
    exit_probability(&field, "right", Site::new(&[start])).map(|r| r.0).map_err(to_py_err)
}

/// Empirical rate `-(1/n) log p^(n)(0, [nx])` of a holding environment.
#[pyfunction]
fn rate(env: &Env, x: Vec<f64>, n: u64) -> PyResult<f64> {
    empirical_rate(&env.inner, &x, n).map(|r| r.i_hat).map_err(to_py_err)
}

/// Legendre rate of the homogeneous walk with kernel `probs`.
#[pyfunction]
fn legendre(probs: Vec<f64>, x: Vec<f64>) -> PyResult<f64> {
    let d = probs.len() / 2;
    let k = JumpSet::new(d, probs.len() % 2 == 1).and_then(|j| TransitionKernel::new(j, &probs)).map_err(to_py_err)?;
    Ok(legendre_rate(&k, &x))
}

/// Run an experiment from config text; returns `(csv, json)` strings.
#[pyfunction]
#[pyo3(signature = (config, force = false))]
fn run_experiment(py: Python<'_>, config: &str, force: bool) -> PyResult<(String, String)> {
    let cfg = ExperimentConfig::parse(config, None).map_err(to_py_err)?;
    let art = py.detach(|| execute(&cfg, force)).map_err(to_py_err)?;
    Ok((art.csv, art.json))
}

#[pymodule]
fn pyrwre(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Add every class and function to `m`; also used to embed the module.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Law>()?;
    m.add_class::<Env>()?;
    m.add_function(wrap_pyfunction!(classify_1d, m)?)?;
    m.add_function(wrap_pyfunction!(kks_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(velocity_1d, m)?)?;
    m.add_function(wrap_pyfunction!(exit_right_probability, m)?)?;
    m.add_function(wrap_pyfunction!(rate, m)?)?;
    m.add_function(wrap_pyfunction!(legendre, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    Ok(())
}
