//! Python bindings. Structured values cross the boundary as plain
//! dicts and lists (round-tripped through JSON), so the Python side never
//! sees Rust wrapper types except `Session`.

use chrono::{DateTime, Utc};
use grounder_core::corpus::{self, BatchOptions, CorpusEntry, CorpusKind, GenConfig, DEFAULT_WEIGHTS};
use grounder_core::scene_graph::{Frame, DEFAULT_RADIUS_M};
use grounder_core::{ActionEvent, CameraPose, Engine, ObjectNode, Pose, RelationalGraph, Vec3};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (s,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let s: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&s).map_err(value_err)
}

fn parse_now(now: Option<&str>) -> PyResult<DateTime<Utc>> {
    match now {
        Some(s) => DateTime::parse_from_rfc3339(s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| value_err(format!("`{s}` is not an RFC 3339 time: {e}"))),
        None => Ok(Utc::now()),
    }
}

fn camera(obj: Option<&Bound<'_, PyAny>>) -> PyResult<Option<CameraPose>> {
    obj.map(|o| from_py::<CameraPose>(o)?.validated().map_err(value_err)).transpose()
}

#[derive(serde::Deserialize)]
struct NodeList {
    #[serde(default = "default_scene_id")]
    session_id: String,
    #[serde(default)]
    session_started_at: DateTime<Utc>,
    nodes: Vec<ObjectNode>,
}

fn default_scene_id() -> String {
    "scene".into()
}

/// Accepts a saved graph document or `{"nodes": [...]}`.
fn scene(obj: &Bound<'_, PyAny>) -> PyResult<RelationalGraph> {
    let v: serde_json::Value = from_py(obj)?;
    if v.get("edges").is_some() {
        let bytes = serde_json::to_vec(&v).map_err(value_err)?;
        return RelationalGraph::load(&bytes).map_err(value_err);
    }
    let list: NodeList = serde_json::from_value(v).map_err(value_err)?;
    RelationalGraph::build(list.session_id, list.session_started_at, list.nodes, DEFAULT_RADIUS_M, Frame::default())
        .map_err(value_err)
}

/// Parses a transcript into a query dict; raises ValueError when it is not
/// a reference.
#[pyfunction]
fn parse<'py>(py: Python<'py>, transcript: &str) -> PyResult<Bound<'py, PyAny>> {
    let q = grounder_core::parse(transcript).map_err(value_err)?;
    to_py(py, &q)
}

/// The eight-cube benchmark scene as a graph document.
#[pyfunction]
fn benchmark_scene(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &corpus::benchmark_scene().to_document())
}

/// Derives relation edges for a scene and returns the full document.
#[pyfunction]
fn build_graph<'py>(py: Python<'py>, scene_doc: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &scene(scene_doc)?.to_document())
}

#[pyfunction]
#[pyo3(signature = (scene_doc, utterance, camera_pose=None, now=None, trace=false))]
fn resolve<'py>(
    py: Python<'py>,
    scene_doc: &Bound<'py, PyAny>,
    utterance: &str,
    camera_pose: Option<&Bound<'py, PyAny>>,
    now: Option<&str>,
    trace: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let graph = scene(scene_doc)?;
    let cam = camera(camera_pose)?;
    let now = parse_now(now)?;
    let mut out = py.detach(|| Engine::default().interpret(&graph, utterance, cam.as_ref(), now));
    if !trace {
        out.result.trace.clear();
    }
    to_py(py, &out)
}

#[pyfunction]
#[pyo3(signature = (scene_doc, n=40, seed=7, weights=None, kind="unambiguous", ambiguous=0, malformed=0))]
#[allow(clippy::too_many_arguments)]
fn generate_corpus<'py>(
    py: Python<'py>,
    scene_doc: &Bound<'py, PyAny>,
    n: usize,
    seed: u64,
    weights: Option<[f64; 4]>,
    kind: &str,
    ambiguous: usize,
    malformed: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let graph = scene(scene_doc)?;
    let kind = match kind {
        "unambiguous" => CorpusKind::Unambiguous,
        "ambiguous" => CorpusKind::Ambiguous,
        "mixed" if ambiguous + malformed <= n => CorpusKind::Mixed { ambiguous, malformed },
        "mixed" => return Err(value_err("ambiguous + malformed exceeds n")),
        other => return Err(value_err(format!("unknown corpus kind `{other}`"))),
    };
    let weights = weights.unwrap_or(DEFAULT_WEIGHTS);
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(value_err("weights must be non-negative with a positive sum"));
    }
    let cfg = GenConfig {
        n,
        weights,
        seed,
        kind,
        ..Default::default()
    };
    let out = py.detach(|| corpus::generate(&graph, &cfg));
    to_py(py, &out.entries)
}

/// Runs corpus entries against a scene and returns the report.
#[pyfunction]
#[pyo3(signature = (scene_doc, entries, parallel=false))]
fn run_batch<'py>(
    py: Python<'py>,
    scene_doc: &Bound<'py, PyAny>,
    entries: &Bound<'py, PyAny>,
    parallel: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let graph = scene(scene_doc)?;
    let entries: Vec<CorpusEntry> = from_py(entries)?;
    let (report, _) = py
        .detach(|| corpus::run_batch(&Engine::default(), &graph, &entries, BatchOptions { parallel }))
        .map_err(value_err)?;
    to_py(py, &report)
}

/// A live guidance session: scene, memory and issued directives.
#[pyclass(module = "grounder")]
struct Session {
    inner: grounder_core::Session,
    engine: Engine,
}

#[pymethods]
impl Session {
    #[new]
    #[pyo3(signature = (session_id="session", now=None))]
    fn new(session_id: &str, now: Option<&str>) -> PyResult<Self> {
        Ok(Session {
            inner: grounder_core::Session::new(session_id, parse_now(now)?),
            engine: Engine::default(),
        })
    }

    /// Continues from bytes written by `persist()`.
    #[staticmethod]
    #[pyo3(signature = (session_id, saved, now=None))]
    fn resume(session_id: &str, saved: &[u8], now: Option<&str>) -> PyResult<Self> {
        Ok(Session {
            inner: grounder_core::Session::resume(session_id, saved, parse_now(now)?).map_err(value_err)?,
            engine: Engine::default(),
        })
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    /// Replaces the node set; memory carries over for ids that remain.
    fn register_scene(&mut self, nodes: &Bound<'_, PyAny>) -> PyResult<()> {
        let nodes: Vec<ObjectNode> = from_py(nodes)?;
        self.engine.register_scene(&mut self.inner, nodes).map_err(value_err)
    }

    #[pyo3(signature = (transcript, camera_pose=None, now=None))]
    fn utterance<'py>(
        &mut self,
        py: Python<'py>,
        transcript: &str,
        camera_pose: Option<&Bound<'py, PyAny>>,
        now: Option<&str>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cam = camera(camera_pose)?;
        let out = self.engine.handle_utterance(&mut self.inner, transcript, cam.as_ref(), parse_now(now)?);
        to_py(py, &out)
    }

    /// Records an action on a node; returns how many directives it retired.
    #[pyo3(signature = (node_id, action, actor="operator", intent=None, center=None, half_extents=None, now=None))]
    #[allow(clippy::too_many_arguments)]
    fn record_action(
        &mut self,
        node_id: &str,
        action: &str,
        actor: &str,
        intent: Option<String>,
        center: Option<[f64; 3]>,
        half_extents: Option<[f64; 3]>,
        now: Option<&str>,
    ) -> PyResult<usize> {
        let pose = match (center, half_extents) {
            (None, None) => None,
            (c, h) => {
                let cur = self
                    .inner
                    .graph
                    .node(node_id)
                    .ok_or_else(|| PyKeyError::new_err(format!("unknown node `{node_id}`")))?;
                Some(Pose {
                    center: c.map(Vec3::from).unwrap_or(cur.center),
                    half_extents: h.map(Vec3::from).unwrap_or(cur.half_extents),
                })
            }
        };
        let event = ActionEvent {
            actor: actor.into(),
            action: action.into(),
            target_id: node_id.into(),
            intent,
            pose,
        };
        self.engine
            .record_action(&mut self.inner, event, parse_now(now)?)
            .map_err(|e| match e {
                grounder_core::GraphError::UnknownNode(id) => PyKeyError::new_err(format!("unknown node `{id}`")),
                e => value_err(e),
            })
    }

    fn graph<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.graph.to_document())
    }

    fn active_directives<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let active: Vec<_> = self.inner.active_directives().collect();
        to_py(py, &active)
    }

    fn persist<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.persist())
    }

    fn __repr__(&self) -> String {
        format!("Session(id={:?}, nodes={})", self.inner.id, self.inner.graph.len())
    }
}

#[pymodule]
fn grounder(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark_scene, m)?)?;
    m.add_function(wrap_pyfunction!(build_graph, m)?)?;
    m.add_function(wrap_pyfunction!(resolve, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_batch, m)?)?;
    m.add_class::<Session>()?;
    Ok(())
}
