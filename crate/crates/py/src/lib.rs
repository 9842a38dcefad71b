//! Python bindings: `import pycgra`.

use std::path::PathBuf;

use cgra_codesign::arch::{parse_design, serialize_design, validate_design, DesignPoint};
use cgra_codesign::costs::{evaluate_one, Candidate, CostCoeffs, EvalReport, Objective};
use cgra_codesign::kernel::{apply_sw, builtin_names, load_kernel, KernelGraph};
use cgra_codesign::mapper::{map_kernel, MapBudget, MappingResult};
use cgra_codesign::orchestrate::{self, RunConfig};
use cgra_codesign::select::{run_script, trace_to_jsonl, SelectionScript};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(pycgra, CodesignError, PyException, "Raised with the library's error code as the first line.");

fn err(e: impl std::fmt::Display) -> PyErr {
    CodesignError::new_err(e.to_string())
}

fn loads<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// One hardware/software design point.
#[pyclass(name = "Design", module = "pycgra", from_py_object)]
#[derive(Clone)]
pub struct PyDesign {
    pub inner: DesignPoint,
}

#[pymethods]
impl PyDesign {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        parse_design(text).map(|inner| PyDesign { inner }).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| err(format!("IO_ERROR {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> String {
        serialize_design(&self.inner)
    }

    /// Violation codes; empty when the design is structurally valid.
    fn validate(&self) -> Vec<String> {
        validate_design(&self.inner).into_iter().map(|v| v.code.as_str().to_string()).collect()
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn rows(&self) -> u32 {
        self.inner.fabric.rows
    }

    #[getter]
    fn cols(&self) -> u32 {
        self.inner.fabric.cols
    }

    #[getter]
    fn topology(&self) -> &'static str {
        self.inner.fabric.topology.as_str()
    }

    #[getter]
    fn fu_kinds(&self) -> Vec<&'static str> {
        self.inner.fabric.fu_kinds.iter().map(|k| k.as_str()).collect()
    }

    #[getter]
    fn config_mem_depth(&self) -> u32 {
        self.inner.fabric.config_mem_depth
    }

    #[getter]
    fn unroll_factor(&self) -> u32 {
        self.inner.sw.unroll_factor
    }

    #[getter]
    fn vectorize_factor(&self) -> u32 {
        self.inner.sw.vectorize_factor
    }

    fn __repr__(&self) -> String {
        let f = &self.inner.fabric;
        format!("Design({} {}x{} {} depth={})", self.inner.id, f.rows, f.cols, f.topology, f.config_mem_depth)
    }
}

/// A loop-body dataflow graph.
#[pyclass(name = "Kernel", module = "pycgra", from_py_object)]
#[derive(Clone)]
pub struct PyKernel {
    pub inner: KernelGraph,
}

#[pymethods]
impl PyKernel {
    /// A built-in kernel name or a path to a kernel JSON file.
    #[staticmethod]
    fn load(name_or_path: &str) -> PyResult<Self> {
        load_kernel(name_or_path).map(|inner| PyKernel { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        KernelGraph::from_json(text).map(|inner| PyKernel { inner }).map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Unrolled then vectorized copy.
    fn transform(&self, unroll: u32, vectorize: u32) -> PyResult<Self> {
        let sw = cgra_codesign::arch::SwParams { unroll_factor: unroll, vectorize_factor: vectorize };
        apply_sw(&self.inner, &sw).map(|inner| PyKernel { inner }).map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn trip_count(&self) -> u64 {
        self.inner.trip_count
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.nodes.len()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edges.len()
    }

    fn __repr__(&self) -> String {
        format!("Kernel({}, nodes={}, trip={})", self.inner.name, self.inner.nodes.len(), self.inner.trip_count)
    }
}

/// A modulo schedule with placements and routes.
#[pyclass(name = "Mapping", module = "pycgra", from_py_object)]
#[derive(Clone)]
pub struct PyMapping {
    pub inner: MappingResult,
}

#[pymethods]
impl PyMapping {
    #[getter]
    fn ii(&self) -> u32 {
        self.inner.ii
    }

    #[getter]
    fn schedule_len(&self) -> u32 {
        self.inner.schedule_len
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!("Mapping(ii={}, schedule_len={})", self.inner.ii, self.inner.schedule_len)
    }
}

#[pyclass(name = "EvalReport", module = "pycgra", get_all, from_py_object)]
#[derive(Clone)]
pub struct PyEvalReport {
    design_id: String,
    speedup: f64,
    power_mw: f64,
    area_kum2: f64,
    power_efficiency: f64,
    score: f64,
    feasible: bool,
}

impl From<EvalReport> for PyEvalReport {
    fn from(r: EvalReport) -> Self {
        PyEvalReport {
            design_id: r.design_id,
            speedup: r.speedup,
            power_mw: r.power_mw,
            area_kum2: r.area_kum2,
            power_efficiency: r.power_efficiency,
            score: r.score,
            feasible: r.feasible,
        }
    }
}

#[pymethods]
impl PyEvalReport {
    fn __repr__(&self) -> String {
        format!(
            "EvalReport({} speedup={:.4} power_mw={:.4} area_kum2={:.4} feasible={})",
            self.design_id,
            self.speedup,
            self.power_mw,
            self.area_kum2,
            if self.feasible { "True" } else { "False" }
        )
    }
}

fn budget(max_ii: Option<u32>, max_steps: Option<u64>) -> MapBudget {
    let d = MapBudget::default();
    MapBudget { max_ii: max_ii.unwrap_or(d.max_ii), max_steps_per_ii: max_steps.unwrap_or(d.max_steps_per_ii) }
}

/// Names of the built-in kernels.
#[pyfunction]
fn kernels() -> Vec<&'static str> {
    builtin_names().collect()
}

/// Applies the design's software factors to `kernel` and maps the result.
#[pyfunction]
#[pyo3(signature = (kernel, design, max_ii=None, max_steps=None))]
fn map_design(py: Python<'_>, kernel: &PyKernel, design: &PyDesign, max_ii: Option<u32>, max_steps: Option<u64>) -> PyResult<PyMapping> {
    let (k, d, b) = (&kernel.inner, &design.inner, budget(max_ii, max_steps));
    py.detach(|| {
        let t = apply_sw(k, &d.sw).map_err(|e| e.to_string())?;
        map_kernel(&t, &d.fabric, &b).map_err(|e| e.to_string())
    })
    .map(|inner| PyMapping { inner })
    .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (kernel, design, objective="min-power", min_speedup=1.5, max_ii=None, max_steps=None))]
fn evaluate(
    py: Python<'_>,
    kernel: &PyKernel,
    design: &PyDesign,
    objective: &str,
    min_speedup: f64,
    max_ii: Option<u32>,
    max_steps: Option<u64>,
) -> PyResult<PyEvalReport> {
    let obj = Objective { mode: objective.parse().map_err(err)?, min_speedup };
    let m = map_design(py, kernel, design, max_ii, max_steps)?;
    evaluate_one(&Candidate::mapped(design.inner.clone(), m.inner), &kernel.inner, &obj, &CostCoeffs::default())
        .map(Into::into)
        .map_err(err)
}

/// Runs the selection policy over a script and returns the trace records.
#[pyfunction]
fn select_sim<'py>(py: Python<'py>, script_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let script: SelectionScript = serde_json::from_str(script_json).map_err(err)?;
    let trace = run_script(&script).map_err(err)?;
    let text = format!("[{}]", trace_to_jsonl(&trace).lines().collect::<Vec<_>>().join(","));
    loads(py, &text)
}

/// Runs the full loop from a JSON config and returns the metrics.
#[pyfunction]
#[pyo3(signature = (config_json, resume=false))]
fn run<'py>(py: Python<'py>, config_json: &str, resume: bool) -> PyResult<Bound<'py, PyAny>> {
    let cfg = RunConfig::from_json(config_json).map_err(err)?;
    let metrics = py.detach(|| orchestrate::run(&cfg, resume)).map_err(err)?;
    loads(py, &serde_json::to_string(&metrics).map_err(err)?)
}

#[pymodule]
pub fn pycgra(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CodesignError", m.py().get_type::<CodesignError>())?;
    m.add_class::<PyDesign>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyMapping>()?;
    m.add_class::<PyEvalReport>()?;
    m.add_function(wrap_pyfunction!(kernels, m)?)?;
    m.add_function(wrap_pyfunction!(map_design, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(select_sim, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
