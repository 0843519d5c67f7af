//! Python bindings: scenes, planning, verification and rendering.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use spacetime_assembly::cli::{render_gantt, PlanFile};
use spacetime_assembly::orchestrator::{plan_assembly as plan_core, PlanStats, PlannerConfig};
use spacetime_assembly::scenes;
use spacetime_assembly::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::PlannerFailure(_) | Error::NothingPlaceable | Error::BacktrackTooDeep { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Scene", module = "spacetime_assembly")]
#[derive(Clone)]
struct PyScene {
    inner: spacetime_assembly::world::Scene,
}

#[pymethods]
impl PyScene {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        spacetime_assembly::world::Scene::from_json_str(text)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        spacetime_assembly::world::Scene::load(path)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    /// One of the bundled generators: tower, wall, well, pavilion, handover.
    #[staticmethod]
    fn generate(name: &str) -> PyResult<Self> {
        scenes::by_name(name).map(|inner| Self { inner }).map_err(to_py)
    }

    fn with_robots(&self, m: usize) -> PyResult<Self> {
        self.inner.with_robots(m).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.inner.to_json_pretty()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn robot_ids(&self) -> Vec<String> {
        self.inner.robot_ids().map(str::to_owned).collect()
    }

    #[getter]
    fn object_ids(&self) -> Vec<String> {
        self.inner.object_ids().map(str::to_owned).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene(objects={}, robots={})",
            self.inner.objects.len(),
            self.inner.robots.len()
        )
    }
}

#[pyclass(name = "Plan", module = "spacetime_assembly")]
struct PyPlan {
    file: PlanFile,
    stats: PlanStats,
}

#[pymethods]
impl PyPlan {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            file: PlanFile::from_json_str(text).map_err(to_py)?,
            stats: PlanStats::default(),
        })
    }

    #[getter]
    fn makespan(&self) -> f64 {
        self.file.makespan
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.file.seed
    }

    #[getter]
    fn placement_order(&self) -> Vec<String> {
        self.file.placed.clone()
    }

    #[getter]
    fn backtracks(&self) -> usize {
        self.file.backtracks
    }

    /// Wall-clock seconds per phase: keyframes, path, post, total.
    #[getter]
    fn timings(&self) -> (f64, f64, f64, f64) {
        let s = &self.stats;
        (s.keyframes, s.path, s.post, s.total)
    }

    /// `(robot, action, object, start, end)` for every event, per robot in id order.
    fn events(&self) -> Vec<(String, String, String, f64, f64)> {
        self.file
            .events
            .iter()
            .flat_map(|(r, es)| {
                es.iter()
                    .map(move |e| (r.clone(), e.action.as_str().to_owned(), e.object.clone(), e.start, e.end))
            })
            .collect()
    }

    /// Findings of the re-simulation as strings; empty means the plan is valid.
    #[pyo3(signature = (scene, dt = 0.005))]
    fn verify(&self, scene: &PyScene, dt: f64) -> PyResult<Vec<String>> {
        if !(dt > 0.0) {
            return Err(PyValueError::new_err("dt must be positive"));
        }
        self.file.check_scene(&scene.inner).map_err(to_py)?;
        Ok(self
            .file
            .verify(&scene.inner, dt)
            .findings
            .iter()
            .map(ToString::to_string)
            .collect())
    }

    fn gantt_svg(&self, scene: &PyScene) -> String {
        render_gantt(&scene.inner, &self.file)
    }

    fn to_json(&self) -> String {
        self.file.to_json()
    }
}

/// Plans `scene`. `config` is an optional planner config as JSON text.
#[pyfunction]
#[pyo3(signature = (scene, seed = 0, config = None, fixed_time = None))]
fn plan_assembly(
    py: Python<'_>,
    scene: &PyScene,
    seed: u64,
    config: Option<&str>,
    fixed_time: Option<f64>,
) -> PyResult<PyPlan> {
    let mut cfg = match config {
        Some(text) => PlannerConfig::from_json_str(text).map_err(to_py)?,
        None => PlannerConfig::default(),
    };
    cfg.seed = seed;
    if fixed_time.is_some() {
        cfg.fixed_time = fixed_time;
    }
    cfg.validate().map_err(to_py)?;
    let inner = &scene.inner;
    let plan = py.allow_threads(|| plan_core(inner, &cfg, seed)).map_err(to_py)?;
    Ok(PyPlan {
        file: PlanFile::new(inner, &cfg, &plan),
        stats: plan.stats,
    })
}

#[pymodule]
fn spacetime_assembly_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_class::<PyPlan>()?;
    m.add_function(wrap_pyfunction!(plan_assembly, m)?)?;
    m.add("BENCHMARKS", scenes::BENCHMARKS.to_vec())?;
    Ok(())
}
