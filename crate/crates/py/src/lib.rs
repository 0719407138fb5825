//! Python module `otc_mm`: configs, markets, surfaces, quotes, simulation
//! and the residual correction.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use otc_mm::config::RunConfig;
use otc_mm::factor::eigendecompose;
use otc_mm::hamiltonian::HamiltonianOps;
use otc_mm::model::{LogisticIntensity, MarketSpec, Side};
use otc_mm::quotes::{myopic_quote, optimal_quote, MyopicPolicy, Quote, QuotePolicy, SurfacePolicy};
use otc_mm::residual::{adjusted_quote, eta_estimate};
use otc_mm::simulator::{simulate as run_simulation, total_variance_gap, SimulationConfig};
use otc_mm::solver::{grid_for, solve as run_solve, SolverConfig, ValueSurface};
use otc_mm::surface_io::{load_surface, save_surface};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn side(s: &str) -> PyResult<Side> {
    match s {
        "bid" => Ok(Side::Bid),
        "ask" => Ok(Side::Ask),
        other => Err(PyKeyError::new_err(format!("side must be 'bid' or 'ask', got '{other}'"))),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(json_to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn quote_value(q: Quote) -> Option<f64> {
    q.price()
}

/// Run configuration parsed from TOML (unknown keys rejected).
#[pyclass(name = "Config", frozen)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::from_toml_str(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_path(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::from_path(&path).map_err(err)?,
        })
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn surface_key(&self) -> String {
        self.inner.surface_key()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn factors(&self) -> Option<usize> {
        self.inner.solver.factors
    }

    fn market(&self) -> PyResult<PyMarket> {
        Ok(PyMarket {
            inner: self.inner.market().map_err(err)?,
        })
    }

    /// Solve with this config's factors, grid and time step.
    fn solve(&self, py: Python<'_>) -> PyResult<PySurface> {
        let cfg = self.inner.clone();
        let s = py
            .detach(move || -> otc_mm::Result<ValueSurface> {
                let market = cfg.market()?;
                let fm = RunConfig::factor_model(&market, cfg.solver.factors)?;
                let grid = grid_for(&market, &fm, &cfg.grid_nodes(fm.n_factors())?)?;
                run_solve(&market, &fm, &grid, &cfg.solver_config())
            })
            .map_err(err)?;
        Ok(PySurface { inner: Arc::new(s) })
    }
}

#[pyclass(name = "Market", frozen)]
struct PyMarket {
    inner: MarketSpec,
}

#[pymethods]
impl PyMarket {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn horizon_days(&self) -> f64 {
        self.inner.horizon
    }

    fn covariance(&self) -> Vec<Vec<f64>> {
        let c = self.inner.covariance();
        (0..c.rows()).map(|i| (0..c.cols()).map(|j| c[(i, j)]).collect()).collect()
    }

    /// `(eigenvalues, eigenvectors)`, eigenvalues descending, vectors as rows.
    fn eigen(&self) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let e = eigendecompose(self.inner.covariance()).map_err(err)?;
        let vecs = (0..e.dim()).map(|j| e.eigenvector(j)).collect();
        Ok((e.eigenvalues, vecs))
    }

    /// `q'Σq`.
    fn risk(&self, q: Vec<f64>) -> PyResult<f64> {
        if q.len() != self.inner.dim() {
            return Err(err(format!("need {} inventories", self.inner.dim())));
        }
        Ok(self.inner.risk(&q))
    }

    fn myopic_quote(&self, asset: usize, side_name: &str) -> PyResult<f64> {
        if asset >= self.inner.dim() {
            return Err(err(format!("asset {asset} out of range")));
        }
        Ok(myopic_quote(&self.inner, asset, side(side_name)?))
    }

    /// Solve the value surface; `factors=None` uses inventory coordinates.
    #[pyo3(signature = (factors=None, nodes=71, dt=None))]
    fn solve(&self, py: Python<'_>, factors: Option<usize>, nodes: usize, dt: Option<f64>) -> PyResult<PySurface> {
        let market = self.inner.clone();
        let s = py
            .detach(move || -> otc_mm::Result<ValueSurface> {
                let fm = RunConfig::factor_model(&market, factors)?;
                let grid = grid_for(&market, &fm, &vec![nodes; fm.n_factors()])?;
                let cfg = SolverConfig {
                    dt,
                    ..SolverConfig::default()
                };
                run_solve(&market, &fm, &grid, &cfg)
            })
            .map_err(err)?;
        Ok(PySurface { inner: Arc::new(s) })
    }

    /// Monte Carlo with myopic quotes; returns the summary as a dict.
    #[pyo3(signature = (n_paths=2000, seed=1))]
    fn simulate_myopic<'py>(&self, py: Python<'py>, n_paths: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let policy = MyopicPolicy::new(&self.inner);
        simulate_policy(py, &self.inner, &policy, n_paths, seed)
    }
}

fn simulate_policy<'py>(
    py: Python<'py>,
    market: &MarketSpec,
    policy: &dyn QuotePolicy,
    n_paths: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = SimulationConfig {
        n_paths,
        seed,
        ..SimulationConfig::default()
    };
    let out = py.detach(|| run_simulation(market, policy, &cfg)).map_err(err)?;
    let mut v = serde_json::to_value(&out.summary).map_err(err)?;
    let (gap, gap_se) = total_variance_gap(&out.paths);
    let o = v.as_object_mut().expect("summary is an object");
    o.insert("total_variance_gap".into(), gap.into());
    o.insert("total_variance_gap_se".into(), gap_se.into());
    o.insert("pnl".into(), out.paths.iter().map(|p| p.pnl).collect::<Vec<_>>().into());
    o.insert("warnings".into(), out.warnings.clone().into());
    json_to_py(py, &v)
}

#[pyclass(name = "Surface", frozen)]
struct PySurface {
    inner: Arc<ValueSurface>,
}

#[pymethods]
impl PySurface {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<(Self, String)> {
        let (s, key) = load_surface(&path).map_err(err)?;
        Ok((Self { inner: Arc::new(s) }, key))
    }

    fn save(&self, path: PathBuf, key: &str) -> PyResult<()> {
        save_surface(&path, &self.inner, key).map_err(err)
    }

    #[getter]
    fn n_factors(&self) -> usize {
        self.inner.grid.dims()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps
    }

    fn value_at_origin(&self) -> f64 {
        self.inner.value_at_origin()
    }

    /// θ̃(t, ·) at an inventory vector.
    fn value(&self, t: f64, q: Vec<f64>) -> PyResult<f64> {
        if q.len() != self.inner.market.dim() {
            return Err(err(format!("need {} inventories", self.inner.market.dim())));
        }
        self.inner.evaluate(t, &self.inner.factor_model.project(&q)).map_err(err)
    }

    /// Optimal quote, or `None` when the request is refused.
    fn quote(&self, t: f64, q: Vec<f64>, asset: usize, side_name: &str, size: f64) -> PyResult<Option<f64>> {
        let q = optimal_quote(&self.inner, t, &q, asset, side(side_name)?, size).map_err(err)?;
        Ok(quote_value(q))
    }

    #[pyo3(signature = (n_paths=2000, seed=1))]
    fn simulate<'py>(&self, py: Python<'py>, n_paths: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let policy = SurfacePolicy::new(self.inner.clone());
        simulate_policy(py, &self.inner.market, &policy, n_paths, seed)
    }

    /// `(η̂, standard error)` at `(t, q)`.
    #[pyo3(signature = (t, q, n_paths=500, seed=1))]
    fn eta(&self, py: Python<'_>, t: f64, q: Vec<f64>, n_paths: usize, seed: u64) -> PyResult<(f64, f64)> {
        let s = self.inner.clone();
        let e = py
            .detach(move || eta_estimate(&s, &s.market, t, &q, n_paths, seed))
            .map_err(err)?;
        Ok((e.value, e.stderr))
    }

    /// `(unadjusted, adjusted)` quotes; `None` entries are refusals.
    #[pyo3(signature = (t, q, asset, side_name, size, n_paths=500, seed=1, common_random_numbers=true))]
    #[allow(clippy::too_many_arguments)]
    fn adjusted_quote(
        &self,
        py: Python<'_>,
        t: f64,
        q: Vec<f64>,
        asset: usize,
        side_name: &str,
        size: f64,
        n_paths: usize,
        seed: u64,
        common_random_numbers: bool,
    ) -> PyResult<(Option<f64>, Option<f64>)> {
        let sd = side(side_name)?;
        let s = self.inner.clone();
        let a = py
            .detach(move || adjusted_quote(&s, &s.market, t, &q, asset, sd, size, n_paths, seed, common_random_numbers))
            .map_err(err)?;
        Ok((quote_value(a.unadjusted), quote_value(a.adjusted)))
    }
}

/// `(δ*, H, H')` at `p` for the logistic intensity with the given floor.
#[pyfunction]
#[pyo3(signature = (p, lambda_rfq, alpha, beta, quote_floor=1.0))]
fn hamiltonian(p: f64, lambda_rfq: f64, alpha: f64, beta: f64, quote_floor: f64) -> PyResult<(f64, f64, f64)> {
    let it = LogisticIntensity::new(lambda_rfq, alpha, beta).map_err(err)?;
    Ok(HamiltonianOps::new(it, quote_floor).evaluate(p))
}

/// Fill probability `1 / (1 + e^{α + βδ})`.
#[pyfunction]
fn fill_probability(delta: f64, alpha: f64, beta: f64) -> PyResult<f64> {
    let it = LogisticIntensity::new(1.0, alpha, beta).map_err(err)?;
    Ok(it.fill_probability(delta))
}

#[pymodule]
#[pyo3(name = "otc_mm")]
fn otc_mm_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyMarket>()?;
    m.add_class::<PySurface>()?;
    m.add_function(wrap_pyfunction!(hamiltonian, m)?)?;
    m.add_function(wrap_pyfunction!(fill_probability, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
