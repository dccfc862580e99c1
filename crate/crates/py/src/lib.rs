//! Python bindings. Reports come back as plain dicts and lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;
use svph_core::cones::{check_hypotheses, working_cones};
use svph_core::spectral::{self, SrbMethod};
use svph_core::transfer::{grid_points, FiberDensity};
use svph_core::{branches, transversality, MapSpec, Point2, SvphError};

fn err(e: SvphError) -> PyErr {
    match e {
        SvphError::InvalidMap(_) | SvphError::InvalidArgument(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a
                .iter()
                .map(|x| to_py(py, x))
                .collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn report<'py, T: serde::Serialize>(py: Python<'py>, t: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(t).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// A torus map `(d x + f(x, theta), theta + eps omega(x, theta)) mod 1`.
#[pyclass(name = "Map", module = "svph", from_py_object)]
#[derive(Clone)]
struct PyMap {
    inner: MapSpec,
}

#[pymethods]
impl PyMap {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        MapSpec::from_json(text)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn e0() -> Self {
        Self {
            inner: MapSpec::e0(),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (epsilon = 0.05))]
    fn e1(epsilon: f64) -> Self {
        Self {
            inner: MapSpec::e1(epsilon),
        }
    }

    #[staticmethod]
    fn e2() -> Self {
        Self {
            inner: MapSpec::e2(),
        }
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn degree(&self) -> u32 {
        self.inner.degree
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            inner: self.inner.with_epsilon(epsilon),
        }
    }

    fn apply(&self, x: f64, theta: f64) -> (f64, f64) {
        let q = self.inner.apply(Point2::new(x, theta));
        (q.x, q.theta)
    }

    fn jacobian(&self, x: f64, theta: f64) -> [[f64; 2]; 2] {
        self.inner.jacobian(Point2::new(x, theta)).m
    }

    fn __repr__(&self) -> String {
        format!(
            "Map(degree={}, epsilon={})",
            self.inner.degree, self.inner.epsilon
        )
    }
}

#[pyfunction]
#[pyo3(signature = (map, r = 5, grid = 512))]
fn check<'py>(py: Python<'py>, map: &PyMap, r: u32, grid: usize) -> PyResult<Bound<'py, PyAny>> {
    report(py, &check_hypotheses(&map.inner, r, grid))
}

#[pyfunction]
#[pyo3(signature = (map, grid = 256))]
fn cones<'py>(py: Python<'py>, map: &PyMap, grid: usize) -> PyResult<Bound<'py, PyAny>> {
    report(py, &working_cones(&map.inner, grid).map_err(err)?)
}

/// All `d^n` preimages of `(x, theta)` under `F^n`.
#[pyfunction]
fn preimages(map: &PyMap, x: f64, theta: f64, n: usize) -> PyResult<Vec<(f64, f64)>> {
    let pre = branches::preimages(&map.inner, Point2::new(x, theta), n).map_err(err)?;
    Ok(pre.iter().map(|p| (p.point.x, p.point.theta)).collect())
}

#[pyfunction]
#[pyo3(signature = (map, n, grid = 8))]
fn transversality_counts<'py>(
    py: Python<'py>,
    map: &PyMap,
    n: usize,
    grid: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let c = working_cones(&map.inner, 256).map_err(err)?;
    let pts = grid_points(grid);
    let big_n = transversality::sup_n_count(&map.inner, &c, &pts, n).map_err(err)?;
    let nt = transversality::sup_n_tilde(&map.inner, &c, &pts, n).map_err(err)?;
    report(py, &serde_json::json!({"N": big_n, "Ntilde": nt}))
}

#[pyfunction]
#[pyo3(signature = (map, n_max = 10, grid = 8))]
fn n0<'py>(py: Python<'py>, map: &PyMap, n_max: usize, grid: usize) -> PyResult<Bound<'py, PyAny>> {
    let c = working_cones(&map.inner, 256).map_err(err)?;
    report(
        py,
        &transversality::n0_estimate(&map.inner, &c, n_max, grid).map_err(err)?,
    )
}

/// SRB density on an `n x n` grid as a list of rows indexed by theta.
#[pyfunction]
#[pyo3(signature = (map, n = 128, method = "ulam", steps = 10_000_000, seed = 1))]
fn srb_density(
    map: &PyMap,
    n: usize,
    method: &str,
    steps: u64,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let m = match method {
        "ulam" => SrbMethod::ulam(),
        "orbit" => SrbMethod::Orbit {
            steps,
            seeds: 64,
            burn_in: 1000,
            seed,
        },
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    let h = spectral::srb_density(&map.inner, m, n, n).map_err(err)?;
    Ok(h.data.chunks(n).map(|r| r.to_vec()).collect())
}

#[pyfunction]
#[pyo3(signature = (map, n = 128, kw = 64))]
fn factorization_error(map: &PyMap, n: usize, kw: usize) -> PyResult<f64> {
    let fiber = FiberDensity::for_map(&map.inner).map_err(err)?;
    let h = spectral::srb_density(&map.inner, SrbMethod::ulam(), n, n).map_err(err)?;
    spectral::factorization_error(&h, &fiber, kw).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (map, n_theta = 512))]
fn averaged_field<'py>(
    py: Python<'py>,
    map: &PyMap,
    n_theta: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let fiber = FiberDensity::for_map(&map.inner).map_err(err)?;
    report(
        py,
        &spectral::averaged_field(&map.inner, &fiber, n_theta).map_err(err)?,
    )
}

#[pyfunction]
#[pyo3(signature = (map, theta = 0.0, period = 6, tol = 1e-8))]
fn x_constant_test<'py>(
    py: Python<'py>,
    map: &PyMap,
    theta: f64,
    period: usize,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    report(
        py,
        &spectral::x_constant_test(&map.inner, theta, period, tol).map_err(err)?,
    )
}

#[pymodule]
fn svph(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMap>()?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(cones, m)?)?;
    m.add_function(wrap_pyfunction!(preimages, m)?)?;
    m.add_function(wrap_pyfunction!(transversality_counts, m)?)?;
    m.add_function(wrap_pyfunction!(n0, m)?)?;
    m.add_function(wrap_pyfunction!(srb_density, m)?)?;
    m.add_function(wrap_pyfunction!(factorization_error, m)?)?;
    m.add_function(wrap_pyfunction!(averaged_field, m)?)?;
    m.add_function(wrap_pyfunction!(x_constant_test, m)?)?;
    Ok(())
}
