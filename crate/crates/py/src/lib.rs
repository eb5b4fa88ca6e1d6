//! Python bindings. Rationals cross the boundary as strings ("1/4", "0.25").

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde_json::Value;

use diolab::exact::{parse_rational, to_f64, Rational};
use diolab::io::{Command, RunConfig};
use diolab::lattice::{self, StageMode};
use diolab::params::{self, GrowthMode, Hypothesis, ParamSet, SequenceOptions, StageSequence};
use diolab::spectrum::{self as sp, BumpProfile, EngineConfig, FitOptions};
use diolab::LabError;

create_exception!(diolab_py, DiolabError, PyException);

fn err(e: LabError) -> PyErr {
    DiolabError::new_err(e.to_string())
}

fn rat(s: &str) -> PyResult<Rational> {
    parse_rational(s).map_err(err)
}

fn growth(s: &str) -> PyResult<GrowthMode> {
    match s {
        "strict" => Ok(GrowthMode::Strict),
        "relaxed" => Ok(GrowthMode::Relaxed),
        "explicit" => Ok(GrowthMode::Explicit),
        _ => Err(DiolabError::new_err(format!("unknown growth mode {s:?}"))),
    }
}

fn stage_mode(s: &str, a: Option<&str>, b: Option<&str>) -> PyResult<StageMode> {
    match s {
        "all_h" => Ok(StageMode::AllH),
        "primes" => Ok(StageMode::Primes),
        "primes_excluding" => Ok(StageMode::PrimesExcluding),
        "nongeometric" => match (a, b) {
            (Some(a), Some(b)) => Ok(StageMode::Nongeometric { a: rat(a)?, b: rat(b)? }),
            _ => Err(DiolabError::new_err("nongeometric mode needs a and b")),
        },
        _ => Err(DiolabError::new_err(format!("unknown stage mode {s:?}"))),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_bound_py_any(py)?,
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_bound_py_any(py)?,
            None => n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py)?,
        },
        Value::String(s) => s.into_bound_py_any(py)?,
        Value::Array(a) => {
            let l = PyList::empty(py);
            for x in a {
                l.append(json_to_py(py, x)?)?;
            }
            l.into_any()
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

/// Construction parameters with the generated stage sequence.
#[pyclass(name = "Params", frozen)]
struct PyParams {
    ps: ParamSet,
    qs: StageSequence,
}

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (gamma, betas, growth="strict", stages=2, exps=None, first_exp=None, base=2))]
    fn new(gamma: &str, betas: Vec<String>, growth: &str, stages: usize, exps: Option<Vec<u64>>, first_exp: Option<u64>, base: u64) -> PyResult<Self> {
        let betas = betas.iter().map(|b| rat(b)).collect::<PyResult<Vec<_>>>()?;
        let g = if exps.is_some() { GrowthMode::Explicit } else { self::growth(growth)? };
        let ps = ParamSet::new(betas.len(), rat(gamma)?, betas, g, stages);
        let qs = params::generate_sequence(&ps, &SequenceOptions { base, first_exp, explicit: exps, ..Default::default() }).map_err(err)?;
        Ok(PyParams { ps, qs })
    }

    /// Raises when the hypothesis ("lattice" or "spectrum") fails.
    #[pyo3(signature = (hypothesis="lattice"))]
    fn validate(&self, hypothesis: &str) -> PyResult<()> {
        let h = match hypothesis {
            "lattice" => Hypothesis::Lattice,
            "spectrum" => Hypothesis::Spectrum,
            _ => return Err(DiolabError::new_err(format!("unknown hypothesis {hypothesis:?}"))),
        };
        params::validate_params(&self.ps, h).map(|_| ()).map_err(err)
    }

    #[getter]
    fn exps(&self) -> Vec<u64> {
        self.qs.exps.clone()
    }

    #[getter]
    fn compliant(&self) -> Vec<bool> {
        self.qs.compliant.clone()
    }

    #[getter]
    fn s(&self) -> String {
        self.ps.s().to_string()
    }

    #[getter]
    fn target_dim(&self) -> String {
        self.ps.target_dim().to_string()
    }

    /// Primes of the standard window at stage i.
    fn window(&self, i: usize) -> PyResult<Vec<u64>> {
        self.check_stage(i)?;
        Ok(params::standard_window(&self.qs, i, &self.ps.gamma).map_err(err)?.primes)
    }

    /// Centers (as rational strings) and tags of stage i.
    #[pyo3(signature = (i, mode="primes_excluding", a=None, b=None))]
    fn build_stage(&self, i: usize, mode: &str, a: Option<&str>, b: Option<&str>) -> PyResult<(Vec<String>, Vec<u64>, String)> {
        self.check_stage(i)?;
        let set = lattice::build_stage(i, &self.ps, &self.qs, &stage_mode(mode, a, b)?).map_err(err)?;
        let centers = set.centers.iter().map(|c| c.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")).collect();
        Ok((centers, set.tags, set.radius.to_string()))
    }

    /// Exact minimal center gap of stage i (d = 1).
    #[pyo3(signature = (i, mode="primes_excluding"))]
    fn min_gap(&self, i: usize, mode: &str) -> PyResult<String> {
        self.check_stage(i)?;
        let set = lattice::build_stage(i, &self.ps, &self.qs, &stage_mode(mode, None, None)?).map_err(err)?;
        Ok(lattice::min_gap(&set).map_err(err)?.to_string())
    }

    fn __repr__(&self) -> String {
        format!("Params(gamma={}, betas={:?}, exps={:?}, growth={})", self.ps.gamma, self.ps.betas.iter().map(|b| b.to_string()).collect::<Vec<_>>(), self.qs.exps, self.qs.mode.name())
    }
}

impl PyParams {
    fn check_stage(&self, i: usize) -> PyResult<()> {
        if i == 0 || i > self.qs.len() {
            return Err(DiolabError::new_err(format!("stage {i} outside 1..={}", self.qs.len())));
        }
        Ok(())
    }
}

/// Truncated spectrum Ĝ_m on |k| ≤ kmax.
#[pyclass(name = "Spectrum", frozen)]
struct PySpectrum {
    g: sp::SparseSpectrum,
}

#[pymethods]
impl PySpectrum {
    #[new]
    #[pyo3(signature = (params, kmax, tolerance=1e-6, mode="primes_excluding", bump_order=4))]
    fn new(params: &PyParams, kmax: i64, tolerance: f64, mode: &str, bump_order: u32) -> PyResult<Self> {
        let mode = if params.ps.gamma == Rational::from_integer(0.into()) { StageMode::AllH } else { stage_mode(mode, None, None)? };
        let f = sp::stage_factors(&params.ps, &params.qs, &mode, BumpProfile::new(bump_order)).map_err(err)?;
        let g = sp::build_spectrum(&f, &EngineConfig::new(kmax as i128, tolerance)).map_err(err)?;
        Ok(PySpectrum { g })
    }

    fn __len__(&self) -> usize {
        self.g.len()
    }

    fn __getitem__(&self, k: i64) -> (f64, f64) {
        let v = self.g.get(k as i128);
        (v.re, v.im)
    }

    #[getter]
    fn kmax(&self) -> i64 {
        self.g.kmax as i64
    }

    #[getter]
    fn err(&self) -> f64 {
        self.g.err
    }

    /// (j, max, argmax) per dyadic shell 2^j ≤ |k| < 2^(j+1).
    fn shells(&self) -> Vec<(u32, f64, i64)> {
        sp::shell_maxima(&self.g).iter().map(|s| (s.j, s.max, s.argmax as i64)).collect()
    }

    /// Fitted Fourier dimension (-2 × envelope slope).
    fn fourier_dimension(&self) -> PyResult<f64> {
        let fit = sp::fit_fourier_dimension(&sp::shell_maxima(&self.g), &FitOptions { band: None, divisor_prime: None }).map_err(err)?;
        Ok(fit.estimate)
    }
}

/// Primes p with lo < p ≤ hi.
#[pyfunction]
fn primes_in_window(lo: &str, hi: &str) -> PyResult<Vec<u64>> {
    Ok(params::primes_in_window(&rat(lo)?, &rat(hi)?).map_err(err)?.primes)
}

/// Φ̂_{i,p}(k) in closed form, for q = 2^log2_q and q^β = qb.
#[pyfunction]
#[pyo3(signature = (p, k, log2_q, qb, order=4))]
fn phi_coeff(p: u64, k: i64, log2_q: f64, qb: i64, order: u32) -> (f64, f64) {
    let v = sp::phi_coeff(p, k as i128, log2_q.exp2(), qb as i128, &BumpProfile::new(order));
    (v.re, v.im)
}

#[pyfunction]
fn piecewise_f(s1: &str, s2: &str, s3: &str, t: &str) -> PyResult<String> {
    Ok(diolab::projections::piecewise_f(&rat(s1)?, &rat(s2)?, &rat(s3)?, &rat(t)?).to_string())
}

#[pyfunction]
fn product_direction_bound(s1: &str, s2: &str, s3: &str, t1: &str, t2: &str) -> PyResult<String> {
    Ok(diolab::projections::product_direction_bound(&rat(s1)?, &rat(s2)?, &rat(s3)?, &rat(t1)?, &rat(t2)?).to_string())
}

/// Exponent of the failing extension estimate; raises when it is not positive.
#[pyfunction]
fn restriction_exponent(gamma: f64, beta: f64, p_tilde: f64, q: f64) -> PyResult<f64> {
    Ok(diolab::restriction::RestrictionParams::from_gamma_beta(gamma, beta, p_tilde, q).map_err(err)?.exponent())
}

/// Runs a CLI pipeline from TOML text; returns the summary as a dict.
#[pyfunction]
#[pyo3(signature = (command, out, config=""))]
fn run<'py>(py: Python<'py>, command: &str, out: &str, config: &str) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = RunConfig::from_toml(config).map_err(err)?;
    cfg.command = Some(Command::parse(command).map_err(err)?);
    cfg.out = out.to_string();
    let outcome = py.detach(|| diolab::run::run(&cfg)).map_err(err)?;
    let v = serde_json::to_value(&outcome.summary).map_err(|e| DiolabError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

#[pyfunction]
fn rational_to_float(x: &str) -> PyResult<f64> {
    Ok(to_f64(&rat(x)?))
}

#[pymodule]
fn diolab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DiolabError", m.py().get_type::<DiolabError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyParams>()?;
    m.add_class::<PySpectrum>()?;
    m.add_function(wrap_pyfunction!(primes_in_window, m)?)?;
    m.add_function(wrap_pyfunction!(phi_coeff, m)?)?;
    m.add_function(wrap_pyfunction!(piecewise_f, m)?)?;
    m.add_function(wrap_pyfunction!(product_direction_bound, m)?)?;
    m.add_function(wrap_pyfunction!(restriction_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(rational_to_float, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
