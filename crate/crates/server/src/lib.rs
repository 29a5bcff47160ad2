//! HTTP front end for the grounding engine.
//!
//! Each session owns a scene graph behind its own lock: mutations
//! (scene registration, actions) are serialized per session, resolution
//! only reads, and sessions never share state.

mod error;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use grounder_core::{
    ActionEvent, CameraPose, Clock, Engine, GuidanceDirective, ManualClock, ObjectNode, Pose, ResolutionConfig,
    Session, SystemClock, Vec3,
};
use parking_lot::RwLock;
use serde::Deserialize;
use serde_json::{json, Value};

pub use error::ApiError;

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub port: u16,
    pub data_dir: PathBuf,
    /// Accept per-request `now` overrides.
    pub test_clock: bool,
    /// Fixed starting time for the server clock (test mode only).
    pub fixed_now: Option<DateTime<Utc>>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            port: DEFAULT_PORT,
            data_dir: PathBuf::from("grounder-data"),
            test_clock: false,
            fixed_now: None,
        }
    }
}

impl ServerConfig {
    /// Reads `GROUNDER_PORT`, `GROUNDER_DATA_DIR` and `GROUNDER_TEST_CLOCK`.
    /// The latter enables test mode when set to `1`/`true` or to an
    /// RFC 3339 timestamp, which then also pins the server clock.
    pub fn from_env() -> Result<Self, String> {
        let mut cfg = ServerConfig::default();
        if let Ok(p) = std::env::var("GROUNDER_PORT") {
            cfg.port = p.parse().map_err(|_| format!("GROUNDER_PORT is not a port: {p}"))?;
        }
        if let Ok(d) = std::env::var("GROUNDER_DATA_DIR") {
            cfg.data_dir = PathBuf::from(d);
        }
        if let Ok(v) = std::env::var("GROUNDER_TEST_CLOCK") {
            match v.trim() {
                "" | "0" | "false" => {}
                "1" | "true" => cfg.test_clock = true,
                ts => {
                    let at = DateTime::parse_from_rfc3339(ts)
                        .map_err(|e| format!("GROUNDER_TEST_CLOCK: {e}"))?
                        .with_timezone(&Utc);
                    cfg.test_clock = true;
                    cfg.fixed_now = Some(at);
                }
            }
        }
        Ok(cfg)
    }
}

struct SessionState {
    session: Session,
    engine: Engine,
    /// Bumped on every graph mutation.
    revision: u64,
}

type SessionHandle = Arc<RwLock<SessionState>>;

pub struct AppState {
    sessions: RwLock<HashMap<String, SessionHandle>>,
    data_dir: PathBuf,
    test_clock: bool,
    clock: Arc<dyn Clock>,
}

impl AppState {
    pub fn new(cfg: &ServerConfig) -> Self {
        let clock: Arc<dyn Clock> = match (cfg.test_clock, cfg.fixed_now) {
            (true, Some(at)) => Arc::new(ManualClock::new(at)),
            _ => Arc::new(SystemClock),
        };
        AppState {
            sessions: RwLock::new(HashMap::new()),
            data_dir: cfg.data_dir.clone(),
            test_clock: cfg.test_clock,
            clock,
        }
    }

    fn now(&self, requested: Option<DateTime<Utc>>) -> Result<DateTime<Utc>, ApiError> {
        match requested {
            None => Ok(self.clock.now()),
            Some(t) if self.test_clock => Ok(t),
            Some(_) => Err(ApiError::unprocessable(
                "CLOCK_OVERRIDE_DISABLED",
                "`now` is only accepted when the server runs with GROUNDER_TEST_CLOCK",
            )),
        }
    }

    fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::session_not_found(id))
    }

    fn graph_path(&self, session_id: &str) -> PathBuf {
        self.data_dir.join(format!("{session_id}.json"))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/scene", post(register_scene))
        .route("/sessions/{id}/utterance", post(utterance))
        .route("/sessions/{id}/actions", post(record_action))
        .route("/sessions/{id}/graph", get(graph))
        .route("/sessions/{id}/persist", post(persist))
        .route("/sessions/{id}/directives", get(directives))
        .with_state(state)
}

pub async fn serve(cfg: ServerConfig) -> std::io::Result<()> {
    let addr = SocketAddr::from(([0, 0, 0, 0], cfg.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    if cfg.test_clock {
        log::warn!("test clock enabled: requests may override `now`");
    }
    axum::serve(listener, router(Arc::new(AppState::new(&cfg)))).await
}

type ApiResult<T> = Result<T, ApiError>;

fn new_session_id() -> String {
    format!("s-{}", uuid::Uuid::new_v4().simple())
}

fn valid_session_name(s: &str) -> bool {
    !s.is_empty() && s.len() <= 128 && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    config: Option<ResolutionConfig>,
    #[serde(default)]
    resume_from: Option<String>,
    #[serde(default)]
    now: Option<DateTime<Utc>>,
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Result<Option<Json<CreateSession>>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req = body?.map(|Json(b)| b).unwrap_or_default();
    let now = app.now(req.now)?;
    let config = req.config.unwrap_or_default();
    config
        .validate()
        .map_err(|m| ApiError::unprocessable("INVALID_CONFIG", m))?;
    let id = new_session_id();
    let session = match &req.resume_from {
        None => Session::new(id.clone(), now),
        Some(from) => {
            if !valid_session_name(from) {
                return Err(ApiError::unprocessable("INVALID_RESUME_ID", format!("bad session id `{from}`")));
            }
            let path = app.graph_path(from);
            let bytes = match std::fs::read(&path) {
                Ok(b) => b,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    return Err(ApiError::new(
                        StatusCode::NOT_FOUND,
                        "PERSISTED_GRAPH_NOT_FOUND",
                        format!("nothing persisted for `{from}`"),
                    )
                    .with_detail(json!({ "resume_from": from })));
                }
                Err(e) => return Err(ApiError::internal(format!("reading {}: {e}", path.display()))),
            };
            Session::resume(id.clone(), &bytes, now)
                .map_err(|e| ApiError::internal(format!("stored graph `{from}` is unreadable: {e}")))?
        }
    };
    let body = json!({
        "session_id": id,
        "created_at": session.created_at,
        "resumed_from": req.resume_from,
        "nodes": session.graph.len(),
        "edges": session.graph.edges().len(),
    });
    let state = SessionState {
        session,
        engine: Engine::new(config),
        revision: 0,
    };
    app.sessions.write().insert(id, Arc::new(RwLock::new(state)));
    Ok((StatusCode::CREATED, Json(body)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneBody {
    nodes: Vec<ObjectNode>,
}

fn same_geometry(a: &ObjectNode, b: &ObjectNode) -> bool {
    a.id == b.id
        && a.label == b.label
        && a.descriptors == b.descriptors
        && a.center == b.center
        && a.half_extents == b.half_extents
        && a.scene_context == b.scene_context
}

fn summary(s: &Session, changed: bool) -> Value {
    json!({
        "session_id": s.id,
        "nodes": s.graph.len(),
        "edges": s.graph.edges().len(),
        "changed": changed,
    })
}

async fn register_scene(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SceneBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let handle = app.session(&id)?;
    let Json(body) = body?;
    if body.nodes.is_empty() {
        return Err(ApiError::unprocessable("EMPTY_SCENE", "scene must contain at least one node"));
    }
    let mut st = handle.write();
    let unchanged = st.session.graph.len() == body.nodes.len()
        && body.nodes.iter().all(|n| n.memory.is_empty())
        && body
            .nodes
            .iter()
            .all(|n| st.session.graph.node(&n.id).is_some_and(|cur| same_geometry(cur, n)));
    if unchanged {
        return Ok(Json(summary(&st.session, false)));
    }
    let st = &mut *st;
    st.engine.register_scene(&mut st.session, body.nodes)?;
    st.revision += 1;
    Ok(Json(summary(&st.session, true)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceBody {
    transcript: String,
    #[serde(default)]
    camera: Option<CameraPose>,
    #[serde(default)]
    now: Option<DateTime<Utc>>,
}

async fn utterance(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<UtteranceBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let handle = app.session(&id)?;
    let Json(body) = body?;
    if body.transcript.trim().is_empty() {
        return Err(ApiError::unprocessable("EMPTY_TRANSCRIPT", "transcript is empty"));
    }
    let now = app.now(body.now)?;
    let camera = body
        .camera
        .map(|c| c.validated())
        .transpose()
        .map_err(|e| ApiError::unprocessable("INVALID_CAMERA", e.to_string()))?;

    // Resolve under the shared lock so utterances can overlap, then
    // record the directive; redo the work if the graph moved meanwhile.
    let (mut outcome, seen) = {
        let st = handle.read();
        let out = st.engine.interpret(&st.session.graph, &body.transcript, camera.as_ref(), now);
        (out, st.revision)
    };
    let mut st = handle.write();
    if st.revision != seen {
        outcome = st.engine.interpret(&st.session.graph, &body.transcript, camera.as_ref(), now);
    }
    st.session.directives.push(outcome.directive.clone());
    Ok(Json(json!({
        "session_id": id,
        "resolution": outcome.result,
        "directive": outcome.directive,
        "query": outcome.query,
        "patterns": outcome.patterns,
        "destination": outcome.destination,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionBody {
    node_id: String,
    action: String,
    #[serde(default = "default_actor")]
    actor: String,
    #[serde(default)]
    intent: Option<String>,
    #[serde(default)]
    new_center: Option<Vec3>,
    #[serde(default)]
    new_half_extents: Option<Vec3>,
    #[serde(default)]
    now: Option<DateTime<Utc>>,
}

fn default_actor() -> String {
    "operator".into()
}

async fn record_action(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<ActionBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let handle = app.session(&id)?;
    let Json(body) = body?;
    let now = app.now(body.now)?;
    let mut st = handle.write();
    let current = st
        .session
        .graph
        .node(&body.node_id)
        .ok_or_else(|| ApiError::from(grounder_core::GraphError::UnknownNode(body.node_id.clone())))?;
    let pose = match (body.new_center, body.new_half_extents) {
        (None, None) => None,
        (center, half) => Some(Pose {
            center: center.unwrap_or(current.center),
            half_extents: half.unwrap_or(current.half_extents),
        }),
    };
    let event = ActionEvent {
        actor: body.actor,
        action: body.action,
        target_id: body.node_id.clone(),
        intent: body.intent,
        pose,
    };
    let st = &mut *st;
    let expired = st.engine.record_action(&mut st.session, event, now)?;
    st.revision += 1;
    let node = st.session.graph.node(&body.node_id).expect("node checked above");
    let edges: Vec<_> = st.session.graph.edges().iter().filter(|e| e.from == node.id).collect();
    Ok(Json(json!({
        "session_id": id,
        "node": node,
        "edges": edges,
        "expired_directives": expired,
    })))
}

async fn graph(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let handle = app.session(&id)?;
    let st = handle.read();
    let doc = serde_json::to_value(st.session.graph.to_document()).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(doc))
}

fn write_atomically(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

async fn persist(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let handle = app.session(&id)?;
    let bytes = handle.read().session.persist();
    let path = app.graph_path(&id);
    write_atomically(&path, &bytes).map_err(|e| ApiError::internal(format!("writing {}: {e}", path.display())))?;
    Ok(Json(json!({ "session_id": id, "path": path, "bytes": bytes.len() })))
}

async fn directives(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let handle = app.session(&id)?;
    let st = handle.read();
    let active: Vec<&GuidanceDirective> = st.session.active_directives().collect();
    Ok(Json(json!({ "session_id": id, "directives": active })))
}
