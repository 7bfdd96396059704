//! Python module `affine_bv_py`: constants, indicator energies, minimization
//! and the verification suites. Structured results cross the boundary as JSON
//! text so the Python side only needs `json.loads`.

use affine_bv::energy::{
    affine_energy_boundary, affine_energy_extended, affine_energy_interior, constants as energy_constants,
    make_quadrature,
};
use affine_bv::grid::{extract_trace, make_mask, GridFunction, GridSpec};
use affine_bv::io::{weights_from_sources, DomainConfig};
use affine_bv::minimize::{minimize_level, Level, MinimizeConfig};
use affine_bv::variation::Backend;
use affine_bv::verify::{run_suite, VerifyConfig};
use affine_bv::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::MinimizeFailed { .. } | Error::SupportEscapes { .. } | Error::OracleInconsistent { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_text<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Dimension constants α_n, the sharp Sobolev constant and d_0.
#[pyfunction]
fn constants<'py>(py: Python<'py>, dim: usize) -> PyResult<Bound<'py, PyDict>> {
    let c = energy_constants(dim).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("dim", c.dim)?;
    out.set_item("alpha_n", c.alpha)?;
    out.set_item("sharp_sobolev", c.sharp_sobolev)?;
    out.set_item("d0", c.d0)?;
    out.set_item("sphere_area", c.sphere_area)?;
    Ok(out)
}

/// Affine energy of the domain indicator.
#[pyfunction]
#[pyo3(signature = (domain_json, grid=256, dirs=512, backend="cell-gradient", part="extended"))]
fn indicator_energy(domain_json: &str, grid: usize, dirs: usize, backend: &str, part: &str) -> PyResult<f64> {
    let shape = DomainConfig::from_json(domain_json).and_then(|c| c.to_shape()).map_err(to_py)?;
    let backend: Backend = backend.parse().map_err(to_py)?;
    let mask = GridSpec::around(&shape, grid).and_then(|s| make_mask(&s, &shape)).map_err(to_py)?;
    let quad = make_quadrature(shape.dim(), dirs).map_err(to_py)?;
    let u = GridFunction::from_fn_masked(&mask, |_| 1.0);
    let energy = match part {
        "extended" => affine_energy_extended(&u, &mask, backend, &quad),
        "interior" => affine_energy_interior(&u, &mask, backend, &quad),
        "boundary" => extract_trace(&u, &mask).and_then(|t| affine_energy_boundary(&t, &quad)),
        other => return Err(PyValueError::new_err(format!("unknown part `{other}`"))),
    };
    Ok(energy.map_err(to_py)?.value)
}

/// Minimizes a constrained level with constant weights; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (level, q, domain_json, grid=64, dirs=256, r=1.0, a_const=0.0, b_const=0.0, starts=4, max_iters=1000, seed=42))]
#[allow(clippy::too_many_arguments)]
fn minimize(
    py: Python<'_>,
    level: &str,
    q: f64,
    domain_json: &str,
    grid: usize,
    dirs: usize,
    r: f64,
    a_const: f64,
    b_const: f64,
    starts: usize,
    max_iters: usize,
    seed: u64,
) -> PyResult<String> {
    let shape = DomainConfig::from_json(domain_json).and_then(|c| c.to_shape()).map_err(to_py)?;
    let level: Level = level.parse().map_err(to_py)?;
    let spec = level.constraint(q, r);
    spec.validate(shape.dim()).map_err(to_py)?;
    let mask = GridSpec::around(&shape, grid).and_then(|s| make_mask(&s, &shape)).map_err(to_py)?;
    let quad = make_quadrature(shape.dim(), dirs).map_err(to_py)?;
    let weights = weights_from_sources(&mask, None, None, a_const, b_const).map_err(to_py)?;
    let config = MinimizeConfig { starts, max_iters, seed, deterministic: true, ..MinimizeConfig::default() };
    config.validate().map_err(to_py)?;
    let result = py.detach(|| minimize_level(&mask, &weights, &spec, &quad, &config)).map_err(to_py)?;
    json_text(&result)
}

/// Runs a verification suite; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (suite="all", grid=256, dirs=512, seed=42, corpus=100))]
fn verify(py: Python<'_>, suite: &str, grid: usize, dirs: usize, seed: u64, corpus: usize) -> PyResult<String> {
    let config = VerifyConfig { suite: suite.into(), grid, dirs, seed, corpus_size: corpus, tolerance_override: None };
    let report = py.detach(|| run_suite(&config)).map_err(to_py)?;
    json_text(&report)
}

#[pymodule]
fn affine_bv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(constants, m)?)?;
    m.add_function(wrap_pyfunction!(indicator_energy, m)?)?;
    m.add_function(wrap_pyfunction!(minimize, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
