//! HTTP API over sessions, with a server-sent event stream per session.

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use rowlight_core::agent::AgentClient;
use rowlight_core::device::{Device, Disconnected};
use rowlight_core::log::{read_log, JsonlLog};
use rowlight_core::session::{ResumeError, SessionBuilder};
use rowlight_core::{BoardCommand, ErrorClass, LedPattern, Mode, ReplayError, Session, SessionError, SessionLogRecord};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast;

pub type AgentFactory = Arc<dyn Fn() -> Result<Box<dyn AgentClient>, String> + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("invalid request body: {0}")]
    InvalidBody(String),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("{0}")]
    Internal(String),
}

impl From<ResumeError> for ApiError {
    fn from(e: ResumeError) -> Self {
        match e {
            ResumeError::Replay(e) => ApiError::Replay(e),
            ResumeError::Session(e) => ApiError::Session(e),
        }
    }
}

/// Status for a class of session failure.
pub fn status_for(class: ErrorClass) -> StatusCode {
    match class {
        ErrorClass::Validation => StatusCode::BAD_REQUEST,
        ErrorClass::Lifecycle => StatusCode::CONFLICT,
        ErrorClass::NotFound => StatusCode::NOT_FOUND,
        ErrorClass::Agent => StatusCode::BAD_GATEWAY,
        ErrorClass::Device => StatusCode::SERVICE_UNAVAILABLE,
        ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Session(e) => status_for(e.class()),
            ApiError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ApiError::InvalidBody(_) => StatusCode::BAD_REQUEST,
            ApiError::Replay(_) | ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::Session(e) => e.code(),
            ApiError::UnknownSession(_) => "unknown_session",
            ApiError::InvalidBody(_) => "invalid_body",
            ApiError::Replay(e) => e.code(),
            ApiError::Internal(_) => "internal",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code(), "message": self.to_string()}});
        (self.status(), Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

struct Slot {
    session: Mutex<Session>,
    events: broadcast::Sender<SessionLogRecord>,
}

impl Slot {
    fn lock(&self) -> MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// The single board and which session currently holds it.
struct Binding {
    owner: Option<Arc<Slot>>,
    spare: Option<Box<dyn Device>>,
}

struct Inner {
    agent: AgentFactory,
    log_dir: Option<PathBuf>,
    sessions: Mutex<HashMap<String, Arc<Slot>>>,
    binding: Mutex<Binding>,
    next_id: Mutex<u64>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Session that owns a test or suggestion id of the form `{session}-t{n}`.
fn owner_of(artifact_id: &str) -> Option<&str> {
    artifact_id.rsplit_once('-').map(|(s, _)| s)
}

impl Service {
    /// `log_dir` of `None` keeps sessions in memory only.
    pub fn new(device: Box<dyn Device>, agent: AgentFactory, log_dir: Option<PathBuf>) -> std::io::Result<Self> {
        let mut next = 1;
        if let Some(dir) = &log_dir {
            std::fs::create_dir_all(dir)?;
            for entry in std::fs::read_dir(dir)? {
                let name = entry?.file_name().to_string_lossy().into_owned();
                if let Some(n) =
                    name.strip_prefix('s').and_then(|r| r.strip_suffix(".jsonl")).and_then(|n| n.parse::<u64>().ok())
                {
                    next = next.max(n + 1);
                }
            }
        }
        Ok(Service {
            inner: Arc::new(Inner {
                agent,
                log_dir,
                sessions: Mutex::new(HashMap::new()),
                binding: Mutex::new(Binding { owner: None, spare: Some(device) }),
                next_id: Mutex::new(next),
            }),
        })
    }

    pub fn router(self) -> Router {
        Router::new()
            .route("/session", post(create_session))
            .route("/session/{id}/query", post(query))
            .route("/session/{id}/mode", post(set_mode))
            .route("/session/{id}/schematic", post(sync_schematic))
            .route("/session/{id}/context", post(select_context))
            .route("/session/{id}/highlight", post(highlight_component))
            .route("/session/{id}/command", post(device_command))
            .route("/session/{id}/state", get(state))
            .route("/session/{id}/events", get(events))
            .route("/tests/{id}/{action}", post(test_action))
            .route("/suggestions/{id}/{action}", post(suggestion_action))
            .with_state(self)
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.inner.log_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn builder(&self, id: &str) -> Result<SessionBuilder, ApiError> {
        let agent = (self.inner.agent)().map_err(ApiError::Internal)?;
        let mut builder = Session::builder(id).agent(agent);
        if let Some(path) = self.log_path(id) {
            let sink = JsonlLog::open(&path).map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?;
            builder = builder.sink(sink);
        }
        Ok(builder)
    }

    fn install(&self, id: String, mut session: Session) -> Arc<Slot> {
        let (events, _) = broadcast::channel(1024);
        let tx = events.clone();
        session.subscribe(move |r| {
            let _ = tx.send(r.clone());
        });
        let slot = Arc::new(Slot { session: Mutex::new(session), events });
        self.inner.sessions.lock().unwrap_or_else(|p| p.into_inner()).insert(id, slot.clone());
        slot
    }

    /// Gives the board to a new session made by `make`, disconnecting the
    /// previous holder.
    fn attach(
        &self,
        id: &str,
        make: impl FnOnce(SessionBuilder) -> Result<Session, ApiError>,
    ) -> Result<Arc<Slot>, ApiError> {
        let builder = self.builder(id)?;
        let mut binding = self.inner.binding.lock().unwrap_or_else(|p| p.into_inner());
        // another request may have resumed it meanwhile
        if let Some(slot) = self.inner.sessions.lock().unwrap_or_else(|p| p.into_inner()).get(id) {
            return Ok(slot.clone());
        }
        let device = match (binding.spare.take(), binding.owner.take()) {
            (Some(device), _) => device,
            (None, Some(owner)) => owner.lock().replace_device(Box::new(Disconnected)),
            (None, None) => {
                tracing::warn!(session = id, "board was lost by an earlier failure");
                Box::new(Disconnected)
            }
        };
        let session = make(builder.device(device))?;
        let slot = self.install(id.to_string(), session);
        binding.owner = Some(slot.clone());
        Ok(slot)
    }

    /// Starts a new session holding the board. Blocking.
    pub fn create(&self) -> Result<String, ApiError> {
        let id = {
            let mut next = self.inner.next_id.lock().unwrap_or_else(|p| p.into_inner());
            let id = format!("s{next}");
            *next += 1;
            id
        };
        self.attach(&id, |builder| Ok(builder.start()?))?;
        Ok(id)
    }

    /// Live session, or one rebuilt from its log file. Blocking.
    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        if let Some(slot) = self.inner.sessions.lock().unwrap_or_else(|p| p.into_inner()).get(id) {
            return Ok(slot.clone());
        }
        let path = self
            .log_path(id)
            .filter(|p| valid_session_id(id) && p.exists())
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))?;
        let records = read_log(&path)?;
        // a corrupt log must not cost the current holder its board
        rowlight_core::replay(&records)?;
        let slot = self.attach(id, |builder| Ok(builder.resume(records)?))?;
        tracing::info!(session = id, "resumed from log");
        Ok(slot)
    }

    /// Runs `op` on the session with exclusive access, off the async executor.
    async fn with_session<T, F>(&self, id: String, op: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session) -> Result<T, SessionError> + Send + 'static,
    {
        let service = self.clone();
        tokio::task::spawn_blocking(move || {
            let slot = service.slot(&id)?;
            let mut session = slot.lock();
            op(&mut session).map_err(ApiError::from)
        })
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let bytes: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(bytes).map_err(|e| ApiError::InvalidBody(e.to_string()))
}

fn ok(value: impl serde::Serialize) -> ApiResult {
    Ok(Json(value).into_response())
}

async fn create_session(State(service): State<Service>) -> ApiResult {
    let id = tokio::task::spawn_blocking(move || service.create())
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(json!({"id": id}))).into_response())
}

#[derive(Deserialize)]
struct QueryBody {
    text: String,
}

async fn query(State(service): State<Service>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let QueryBody { text } = parse_body(&body)?;
    ok(service.with_session(id, move |s| s.submit_query(&text)).await?)
}

#[derive(Deserialize)]
struct ModeBody {
    mode: Mode,
}

async fn set_mode(State(service): State<Service>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let ModeBody { mode } = parse_body(&body)?;
    service.with_session(id, move |s| s.set_mode(mode)).await?;
    ok(json!({"mode": mode}))
}

async fn sync_schematic(State(service): State<Service>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let out = service
        .with_session(id, move |s| {
            let revision = s.sync_schematic_xml(&body)?;
            let yaml = s.state().schematic.as_ref().map(|x| x.yaml.clone()).unwrap_or_default();
            Ok(json!({"revision": revision, "yaml": yaml}))
        })
        .await?;
    ok(out)
}

#[derive(Deserialize)]
struct ContextBody {
    ids: Vec<String>,
}

async fn select_context(State(service): State<Service>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let ContextBody { ids } = parse_body(&body)?;
    let selected = service
        .with_session(id, move |s| {
            s.select_context(&ids)?;
            Ok(s.state().selected_context.clone())
        })
        .await?;
    ok(json!({"context": selected}))
}

#[derive(Deserialize)]
struct HighlightBody {
    component_id: String,
    #[serde(default = "blink")]
    pattern: LedPattern,
}

fn blink() -> LedPattern {
    LedPattern::Blink
}

async fn highlight_component(State(service): State<Service>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let HighlightBody { component_id, pattern } = parse_body(&body)?;
    let rows = service.with_session(id, move |s| s.highlight_component(&component_id, pattern)).await?;
    ok(json!({"rows": rows}))
}

async fn device_command(State(service): State<Service>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let cmd: BoardCommand = parse_body(&body)?;
    ok(service.with_session(id, move |s| s.device_command(&cmd)).await?)
}

async fn state(State(service): State<Service>, Path(id): Path<String>) -> ApiResult {
    ok(service.with_session(id, |s| Ok(s.state().clone())).await?)
}

async fn events(
    State(service): State<Service>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let rx = tokio::task::spawn_blocking(move || service.slot(&id).map(|slot| slot.events.subscribe()))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(record) => {
                    let event = Event::default()
                        .event(record.event.kind())
                        .id(record.seq.to_string())
                        .json_data(&record)
                        .expect("records serialize");
                    return Some((Ok(event), rx));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => tracing::warn!(skipped = n, "event stream lagged"),
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Deserialize, Default)]
struct SubmitBody {
    #[serde(default)]
    observation: Option<String>,
}

fn unknown_action(action: &str) -> ApiError {
    ApiError::InvalidBody(format!("unknown action {action:?}"))
}

async fn test_action(
    State(service): State<Service>,
    Path((test_id, action)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult {
    let Some(session_id) = owner_of(&test_id).map(str::to_string) else {
        return Err(SessionError::UnknownTest(test_id).into());
    };
    let submit: SubmitBody = if action == "submit" { parse_body(&body)? } else { SubmitBody::default() };
    let id = test_id.clone();
    let out = service
        .with_session(session_id, move |s| {
            Ok(match action.as_str() {
                "highlight" => Ok(json!({"rows": s.highlight_probes(&id)?})),
                "run" => Ok(serde_json::to_value(s.run_test(&id)?).expect("results serialize")),
                "stop" => {
                    s.stop_test(&id)?;
                    Ok(json!({}))
                }
                "submit" => Ok(json!({"verdict": s.submit_result(&id, submit.observation.as_deref())?})),
                "interpret" => Ok(json!({"interpretation": s.interpret(&id)?})),
                other => Err(unknown_action(other)),
            })
        })
        .await;
    match out {
        Ok(result) => ok(result?),
        // an unknown session prefix means the test does not exist
        Err(ApiError::UnknownSession(_)) => Err(SessionError::UnknownTest(test_id).into()),
        Err(e) => Err(e),
    }
}

async fn suggestion_action(
    State(service): State<Service>,
    Path((suggestion_id, action)): Path<(String, String)>,
) -> ApiResult {
    let Some(session_id) = owner_of(&suggestion_id).map(str::to_string) else {
        return Err(SessionError::UnknownSuggestion(suggestion_id).into());
    };
    let id = suggestion_id.clone();
    let out = service
        .with_session(session_id, move |s| {
            Ok(match action.as_str() {
                "highlight" => Ok(json!({"rows": s.highlight_suggestion(&id)?})),
                "complete" => {
                    s.complete_suggestion(&id)?;
                    Ok(json!({}))
                }
                other => Err(unknown_action(other)),
            })
        })
        .await;
    match out {
        Ok(result) => ok(result?),
        Err(ApiError::UnknownSession(_)) => Err(SessionError::UnknownSuggestion(suggestion_id).into()),
        Err(e) => Err(e),
    }
}

/// Value of an error body, for clients and tests.
pub fn error_code(body: &Value) -> Option<&str> {
    body["error"]["code"].as_str()
}
