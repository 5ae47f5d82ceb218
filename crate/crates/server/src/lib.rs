//! HTTP front end for whynot sessions.
//!
//! Every route lives under `/api/`. Sessions are held in memory, and each
//! one is guarded by its own lock so solver work on one session never
//! blocks another. With a data directory configured, each session's
//! history is appended to `<data>/sessions/<id>.jsonl` before the response
//! leaves, and sessions are rebuilt from those files at startup.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use whynot_core::catalog::Catalog;
use whynot_core::llm_gateway::Gateway;
use whynot_core::service::{append_history, read_history, system_clock, Clock, Session, SessionError};

pub struct AppState {
    catalog: Result<Arc<Catalog>, String>,
    gateway: Arc<Gateway>,
    data_dir: Option<PathBuf>,
    clock: Clock,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    /// `catalog` is the load result; an error keeps the service up but
    /// answers session creation with 503.
    pub fn new(catalog: Result<Catalog, String>, gateway: Gateway, data_dir: Option<PathBuf>) -> Self {
        AppState {
            catalog: catalog.map(Arc::new),
            gateway: Arc::new(gateway),
            data_dir,
            clock: system_clock,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    fn sessions_dir(&self) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join("sessions"))
    }

    /// Rebuilds every persisted session. Returns how many were restored;
    /// files that cannot be replayed are skipped with a warning.
    pub fn restore_sessions(&self) -> std::io::Result<usize> {
        let (Some(dir), Ok(catalog)) = (self.sessions_dir(), &self.catalog) else {
            return Ok(0);
        };
        if !dir.is_dir() {
            return Ok(0);
        }
        let mut restored = 0;
        let mut map = self.sessions.lock().expect("session map");
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            let history = match read_history(&path) {
                Ok(h) => h,
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    continue;
                }
            };
            match Session::restore(id.clone(), catalog.clone(), self.gateway.clone(), self.clock, history) {
                Ok(s) => {
                    map.insert(id, Arc::new(Mutex::new(s)));
                    restored += 1;
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(restored)
    }

    fn session(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.lock().expect("session map").get(id).cloned()
    }

    fn persist(&self, session: &mut Session) -> Result<(), ApiError> {
        if let Some(dir) = self.sessions_dir() {
            std::fs::create_dir_all(&dir).map_err(ApiError::io)?;
            let path = dir.join(format!("{}.jsonl", session.id()));
            append_history(&path, session.unsaved()).map_err(ApiError::io)?;
        }
        session.mark_saved();
        Ok(())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn io(e: std::io::Error) -> Self {
        log::error!("history write failed: {e}");
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("history write failed: {e}"))
    }

    fn not_found(what: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, format!("unknown {what}"))
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::Parse(p) => {
                let mut body = serde_json::to_value(&p).expect("parse errors serialize");
                body["error"] = Value::String(message);
                ApiError {
                    status: StatusCode::UNPROCESSABLE_ENTITY,
                    body,
                }
            }
            SessionError::Foil(_) => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({ "kind": "foil", "error": message }),
            },
            SessionError::UnknownToken(_) => ApiError::new(StatusCode::NOT_FOUND, message),
            SessionError::NoSchedule => ApiError::new(StatusCode::CONFLICT, message),
            SessionError::Explain(_) | SessionError::Corrupt(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, message)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

/// Reads a JSON body; an empty body reads as `{}`. Anything unreadable is
/// a 400, whatever the content type says.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let raw: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(raw)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request body: {e}")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {}

#[derive(Deserialize)]
struct QueryRequest {
    text: String,
}

#[derive(Deserialize)]
struct ConfirmRequest {
    confirmed: bool,
}

/// Runs `f` on the session under its lock on the blocking pool, then
/// persists whatever it recorded.
async fn with_session<T, F>(state: Arc<AppState>, id: String, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, SessionError> + Send + 'static,
{
    let session = state.session(&id).ok_or_else(|| ApiError::not_found("session"))?;
    tokio::task::spawn_blocking(move || {
        let mut s = session.lock().expect("session lock");
        let out = f(&mut s);
        state.persist(&mut s)?;
        Ok(out?)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn to_json<T: serde::Serialize>(v: &T) -> Json<Value> {
    Json(serde_json::to_value(v).expect("response serializes"))
}

async fn create_session(State(state): State<Arc<AppState>>, bytes: Bytes) -> ApiResult {
    let CreateRequest {} = body(&bytes)?;
    let catalog = state
        .catalog
        .clone()
        .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("catalog not loaded: {e}")))?;
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut s = Session::create(id.clone(), catalog, st.gateway.clone(), st.clock);
        st.persist(&mut s)?;
        let response = to_json(&s.create_response());
        st.sessions
            .lock()
            .expect("session map")
            .insert(id, Arc::new(Mutex::new(s)));
        Ok(response)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn next_schedule(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    with_session(state, id, |s| Ok(to_json(&s.next_schedule()))).await
}

async fn submit_query(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    bytes: Bytes,
) -> ApiResult {
    let req: QueryRequest = body(&bytes)?;
    with_session(state, id, move |s| s.submit_query(&req.text).map(|r| to_json(&r))).await
}

async fn confirm_query(
    State(state): State<Arc<AppState>>,
    UrlPath((id, token)): UrlPath<(String, String)>,
    bytes: Bytes,
) -> ApiResult {
    let req: ConfirmRequest = body(&bytes)?;
    with_session(state, id, move |s| s.confirm(&token, req.confirmed).map(|r| to_json(&r))).await
}

async fn history(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    with_session(state, id, |s| Ok(to_json(&s.history()))).await
}

/// The full router. Static files, if given, are served from `/`.
pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/:id/schedules/next", post(next_schedule))
        .route("/api/session/:id/query", post(submit_query))
        .route("/api/session/:id/query/:token/confirm", post(confirm_query))
        .route("/api/session/:id/history", get(history))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
