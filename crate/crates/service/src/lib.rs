//! HTTP session service for live audits.
//!
//! Every session is an append-only newline-delimited JSON log in the data
//! directory. The derived state (P-value, bound, next directive) is a pure
//! function of the log and is rebuilt from it on start-up. The directive for
//! draw `seq` is written to the log before the response that reveals it.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use strat_anytime::audit::AuditSetup;
use strat_anytime::harness::io::trajectory_csv;
use strat_anytime::methods::{Procedure, StepRecord};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }
    fn invalid(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
    fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }
    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"))
    }
    fn storage(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string())
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Open,
    StoppedRejected,
    StoppedExhausted,
    Closed,
}

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Created {
        id: String,
        serial: u64,
        created_at_ms: u64,
        #[serde(default)]
        idempotency_key: Option<String>,
        setup: AuditSetup,
    },
    /// The stratum (1-based) the operator must draw for `seq`; absent when
    /// the session has stopped.
    Directive { seq: usize, stratum: Option<usize> },
    Sample(Sample),
    Closed { at_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub seq: usize,
    pub stratum: usize,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub t: usize,
    pub log_m: f64,
    pub p_value: f64,
    pub lcb: Option<f64>,
}

/// Everything a client sees about a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub created_at_ms: u64,
    pub status: Status,
    pub setup: AuditSetup,
    pub t: usize,
    pub next_seq: usize,
    /// Stratum to draw next, 1-based; absent once the session has stopped.
    pub directive: Option<usize>,
    pub p_value: f64,
    pub log_m: f64,
    pub lcb: Option<f64>,
    pub stop: bool,
    pub tau: Option<usize>,
    pub counts: Vec<usize>,
    pub path: Vec<PathPoint>,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub created_at_ms: u64,
    pub status: Status,
    pub t: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub seq: usize,
    pub stratum: usize,
    pub value: f64,
    #[serde(default)]
    pub note: Option<String>,
}

struct Session {
    id: String,
    serial: u64,
    created_at_ms: u64,
    idempotency_key: Option<String>,
    setup: AuditSetup,
    proc: Procedure,
    samples: Vec<Sample>,
    trajectory: Vec<StepRecord>,
    closed: bool,
    log: Option<File>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl Session {
    fn start(id: String, serial: u64, created_at_ms: u64, key: Option<String>, setup: AuditSetup) -> ApiResult<Self> {
        let spec = setup.check().map_err(|e| ApiError::invalid("invalid_config", e.to_string()))?;
        let mut proc = Procedure::new(&setup.method, &spec, &setup.sizes)
            .map_err(|e| ApiError::invalid("invalid_config", e.to_string()))?;
        proc.set_record(true);
        Ok(Self {
            id,
            serial,
            created_at_ms,
            idempotency_key: key,
            setup,
            proc,
            samples: Vec::new(),
            trajectory: Vec::new(),
            closed: false,
            log: None,
        })
    }

    fn status(&self) -> Status {
        if self.closed {
            Status::Closed
        } else if self.proc.rejected_at().is_some() {
            Status::StoppedRejected
        } else if self.proc.directive().is_none() {
            Status::StoppedExhausted
        } else {
            Status::Open
        }
    }

    /// 0-based stratum to draw next, if the session is still open.
    fn directive(&self) -> Option<usize> {
        match self.status() {
            Status::Open => self.proc.directive(),
            _ => None,
        }
    }

    fn directive_event(&self) -> Event {
        Event::Directive { seq: self.samples.len() + 1, stratum: self.directive().map(|k| k + 1) }
    }

    fn apply(&mut self, s: &Sample) -> ApiResult<()> {
        let k = s.stratum - 1;
        self.proc.observe(k, s.value).map_err(|e| ApiError::invalid("invalid_sample", e.to_string()))?;
        self.trajectory.push(self.proc.record(Some(k), Some(s.value)));
        self.samples.push(s.clone());
        Ok(())
    }

    fn append(&mut self, events: &[Event]) -> ApiResult<()> {
        let file = self.log.as_mut().ok_or_else(|| ApiError::storage("session log is not open"))?;
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e).map_err(ApiError::storage)?;
            buf.push(b'\n');
        }
        file.write_all(&buf).map_err(ApiError::storage)?;
        file.sync_data().map_err(ApiError::storage)
    }

    fn state(&self) -> SessionState {
        SessionState {
            id: self.id.clone(),
            created_at_ms: self.created_at_ms,
            status: self.status(),
            setup: self.setup.clone(),
            t: self.proc.t(),
            next_seq: self.samples.len() + 1,
            directive: self.directive().map(|k| k + 1),
            p_value: self.proc.p_value(),
            log_m: self.proc.log_value(),
            lcb: self.proc.lcb(),
            stop: self.status() != Status::Open,
            tau: self.proc.rejected_at(),
            counts: self.proc.counts(),
            path: self
                .trajectory
                .iter()
                .map(|s| PathPoint { t: s.t, log_m: s.log_m, p_value: s.p_value, lcb: s.lcb })
                .collect(),
            samples: self.samples.clone(),
        }
    }

    /// Rebuilds a session from its log, checking every recorded directive
    /// against the one the procedure gives.
    fn load(path: &Path) -> Result<Self, String> {
        let file = File::open(path).map_err(|e| e.to_string())?;
        let mut session: Option<Session> = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let at = |m: String| format!("{} line {}: {m}", path.display(), i + 1);
            let event: Event = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
            match (event, session.as_mut()) {
                (Event::Created { id, serial, created_at_ms, idempotency_key, setup }, None) => {
                    session = Some(
                        Session::start(id, serial, created_at_ms, idempotency_key, setup)
                            .map_err(|e| at(e.to_string()))?,
                    );
                }
                (Event::Directive { seq, stratum }, Some(s)) => {
                    let expected = s.directive_event();
                    if expected != (Event::Directive { seq, stratum }) {
                        return Err(at(format!("recorded directive {stratum:?} for draw {seq} does not match the log")));
                    }
                }
                (Event::Sample(sample), Some(s)) => {
                    if sample.seq != s.samples.len() + 1 {
                        return Err(at(format!("sample {} out of order", sample.seq)));
                    }
                    s.apply(&sample).map_err(|e| at(e.to_string()))?;
                }
                (Event::Closed { .. }, Some(s)) => s.closed = true,
                _ => return Err(at("log must start with exactly one creation event".into())),
            }
        }
        let mut session = session.ok_or_else(|| format!("{} is empty", path.display()))?;
        session.log = Some(OpenOptions::new().append(true).open(path).map_err(|e| e.to_string())?);
        Ok(session)
    }
}

struct Handle {
    session: Mutex<Session>,
    snapshot: RwLock<Arc<SessionState>>,
}

impl Handle {
    fn new(session: Session) -> Arc<Self> {
        let snapshot = RwLock::new(Arc::new(session.state()));
        Arc::new(Self { session: Mutex::new(session), snapshot })
    }

    fn read(&self) -> Arc<SessionState> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn publish(&self, s: &Session) -> Arc<SessionState> {
        let state = Arc::new(s.state());
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = state.clone();
        state
    }
}

#[derive(Default)]
struct Registry {
    sessions: HashMap<String, Arc<Handle>>,
    /// Ids by creation.
    order: Vec<String>,
    keys: HashMap<String, String>,
    next_serial: u64,
}

pub struct AppState {
    dir: PathBuf,
    registry: RwLock<Registry>,
}

impl AppState {
    /// Opens (or creates) the data directory and rebuilds every session in it.
    pub fn open(dir: &Path) -> Result<Arc<Self>, ApiError> {
        std::fs::create_dir_all(dir).map_err(ApiError::storage)?;
        let mut loaded = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(ApiError::storage)? {
            let path = entry.map_err(ApiError::storage)?.path();
            if path.extension().is_some_and(|e| e == "ndjson") {
                loaded.push(Session::load(&path).map_err(ApiError::storage)?);
            }
        }
        loaded.sort_by_key(|s| (s.serial, s.created_at_ms));
        let mut reg = Registry::default();
        for s in loaded {
            reg.next_serial = reg.next_serial.max(s.serial + 1);
            if let Some(k) = &s.idempotency_key {
                reg.keys.insert(k.clone(), s.id.clone());
            }
            reg.order.push(s.id.clone());
            reg.sessions.insert(s.id.clone(), Handle::new(s));
        }
        Ok(Arc::new(Self { dir: dir.to_path_buf(), registry: RwLock::new(reg) }))
    }

    fn handle(&self, id: &str) -> ApiResult<Arc<Handle>> {
        let reg = self.registry.read().unwrap_or_else(|e| e.into_inner());
        reg.sessions.get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    /// Returns the state and whether a new session was made.
    pub fn create(&self, setup: AuditSetup, key: Option<String>) -> ApiResult<(Arc<SessionState>, bool)> {
        let mut reg = self.registry.write().unwrap_or_else(|e| e.into_inner());
        if let Some(id) = key.as_ref().and_then(|k| reg.keys.get(k)) {
            let h = reg.sessions[id].clone();
            let existing = h.read();
            if existing.setup != setup {
                return Err(ApiError::conflict(
                    "idempotency_key_reused",
                    "this idempotency key was used for a different session",
                ));
            }
            return Ok((existing, false));
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let serial = reg.next_serial;
        let created_at_ms = now_ms();
        let mut session = Session::start(id.clone(), serial, created_at_ms, key.clone(), setup.clone())?;
        let path = self.dir.join(format!("{id}.ndjson"));
        session.log = Some(
            OpenOptions::new().create_new(true).append(true).open(&path).map_err(ApiError::storage)?,
        );
        let created = Event::Created { id: id.clone(), serial, created_at_ms, idempotency_key: key.clone(), setup };
        session.append(&[created, session.directive_event()])?;
        reg.next_serial += 1;
        if let Some(k) = key {
            reg.keys.insert(k, id.clone());
        }
        reg.order.push(id.clone());
        let handle = Handle::new(session);
        let state = handle.read();
        reg.sessions.insert(id, handle);
        Ok((state, true))
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        let reg = self.registry.read().unwrap_or_else(|e| e.into_inner());
        reg.order
            .iter()
            .map(|id| {
                let s = reg.sessions[id].read();
                SessionSummary { id: s.id.clone(), created_at_ms: s.created_at_ms, status: s.status, t: s.t, p_value: s.p_value }
            })
            .collect()
    }

    pub fn get(&self, id: &str) -> ApiResult<Arc<SessionState>> {
        Ok(self.handle(id)?.read())
    }

    /// Applies one draw. Resending an already applied draw with the same
    /// stratum and value is a no-op that returns the current state.
    pub fn submit(&self, id: &str, req: SampleRequest) -> ApiResult<Arc<SessionState>> {
        let handle = self.handle(id)?;
        let mut s = handle.session.lock().unwrap_or_else(|e| e.into_inner());
        let next = s.samples.len() + 1;
        if req.seq >= 1 && req.seq < next {
            let prev = &s.samples[req.seq - 1];
            if prev.stratum == req.stratum && prev.value.to_bits() == req.value.to_bits() {
                return Ok(handle.read());
            }
            return Err(ApiError::conflict(
                "seq_taken",
                format!("draw {} was already recorded with different contents", req.seq),
            ));
        }
        if req.seq != next {
            return Err(ApiError::conflict("stale_seq", format!("expected draw {next}, got {}", req.seq)));
        }
        let Some(directed) = s.directive() else {
            return Err(ApiError::conflict(
                "session_stopped",
                format!("session is {:?}; no more draws are accepted", s.status()),
            ));
        };
        if !(req.value.is_finite() && (0.0..=1.0).contains(&req.value)) {
            return Err(ApiError::invalid("value_out_of_range", format!("value {} is outside [0, 1]", req.value)));
        }
        if req.stratum != directed + 1 {
            return Err(ApiError::invalid(
                "stratum_mismatch",
                format!("draw {next} must come from stratum {}, not {}", directed + 1, req.stratum),
            ));
        }
        let sample = Sample { seq: next, stratum: req.stratum, value: req.value, note: req.note, at_ms: now_ms() };
        let before = (s.proc.clone(), s.trajectory.len(), s.samples.len());
        // persist the draw and the next directive before anyone can see either
        let outcome = s.apply(&sample).and_then(|()| {
            let directive = s.directive_event();
            s.append(&[Event::Sample(sample), directive])
        });
        if let Err(e) = outcome {
            s.proc = before.0;
            s.trajectory.truncate(before.1);
            s.samples.truncate(before.2);
            return Err(e);
        }
        Ok(handle.publish(&s))
    }

    pub fn close(&self, id: &str) -> ApiResult<Arc<SessionState>> {
        let handle = self.handle(id)?;
        let mut s = handle.session.lock().unwrap_or_else(|e| e.into_inner());
        if !s.closed {
            s.append(&[Event::Closed { at_ms: now_ms() }])?;
            s.closed = true;
        }
        Ok(handle.publish(&s))
    }

    pub fn trajectory(&self, id: &str) -> ApiResult<String> {
        let handle = self.handle(id)?;
        let s = handle.session.lock().unwrap_or_else(|e| e.into_inner());
        trajectory_csv(&s.trajectory).map_err(ApiError::storage)
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid("bad_request", e.to_string()))
}

async fn create_session(State(app): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let setup: AuditSetup = parse(&body)?;
    let key = headers.get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string);
    let (state, created) = app.create(setup, key)?;
    let code = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((code, Json(state.as_ref().clone())).into_response())
}

async fn list_sessions(State(app): State<Arc<AppState>>) -> Json<Vec<SessionSummary>> {
    Json(app.list())
}

async fn get_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionState>> {
    Ok(Json(app.get(&id)?.as_ref().clone()))
}

async fn submit_sample(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<SessionState>> {
    let req: SampleRequest = parse(&body)?;
    Ok(Json(app.submit(&id, req)?.as_ref().clone()))
}

async fn close_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionState>> {
    Ok(Json(app.close(&id)?.as_ref().clone()))
}

async fn get_trajectory(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let csv = app.trajectory(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/samples", post(submit_sample))
        .route("/sessions/{id}/close", post(close_session))
        .route("/sessions/{id}/trajectory", get(get_trajectory))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    if !addr.ip().is_loopback() {
        eprintln!("warning: {addr} is not a loopback address and the API has no authentication");
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
