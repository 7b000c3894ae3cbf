//! HTTP API for interactive configuration: clients open a session on a
//! problem, assign and retract atoms, and get back which atoms are forced,
//! forbidden or still free.

pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State as AxumState};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{Mutex, RwLock};
use uuid::Uuid;

pub use session::{AtomRef, Choice, Session, SessionError, State, Status, UserAssignment};

type SessionRef = Arc<Mutex<Session>>;

/// All open sessions. Each session has its own lock, so requests to one
/// session run one at a time while distinct sessions proceed in parallel.
#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<Uuid, SessionRef>>>,
}

pub enum ApiError {
    NotFound(String),
    Invalid(String),
    Internal(String),
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Parse(_) | SessionError::UnknownAtom(_) | SessionError::Oracle(_) => ApiError::Invalid(e.to_string()),
            SessionError::UnknownAssignment(_) => ApiError::NotFound(e.to_string()),
            SessionError::Propagate(_) => ApiError::Internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, msg) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Invalid(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (code, Json(json!({ "error": msg }))).into_response()
    }
}

#[derive(Deserialize, Default)]
pub struct OracleFlag {
    #[serde(default)]
    oracle: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
pub enum RetractRequest {
    Index { index: usize },
    Atom { atom: AtomRef },
}

pub fn router() -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/:id", get(show).delete(remove))
        .route("/sessions/:id/assign", post(assign))
        .route("/sessions/:id/retract", post(retract))
        .with_state(AppState::default())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))
}

async fn lookup(state: &AppState, id: &str) -> Result<(Uuid, SessionRef), ApiError> {
    let missing = || ApiError::NotFound(format!("no session {id}"));
    let uuid = Uuid::parse_str(id).map_err(|_| missing())?;
    let s = state.sessions.read().await.get(&uuid).cloned().ok_or_else(missing)?;
    Ok((uuid, s))
}

async fn create(AxumState(state): AxumState<AppState>, Query(q): Query<OracleFlag>, body: String) -> Result<Response, ApiError> {
    let session = blocking(move || Session::from_text(&body, q.oracle)).await??;
    let id = Uuid::new_v4();
    let payload = json!({ "id": id, "state": session.state });
    state.sessions.write().await.insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(payload)).into_response())
}

async fn show(AxumState(state): AxumState<AppState>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let (uuid, s) = lookup(&state, &id).await?;
    let s = s.lock().await;
    Ok(Json(json!({ "id": uuid, "state": s.state })))
}

async fn remove(AxumState(state): AxumState<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let (uuid, _) = lookup(&state, &id).await?;
    state.sessions.write().await.remove(&uuid);
    Ok(StatusCode::NO_CONTENT)
}

/// Runs `f` on the locked session off the async threads.
async fn update(
    state: &AppState,
    id: &str,
    f: impl FnOnce(&mut Session) -> Result<State, SessionError> + Send + 'static,
) -> Result<Json<serde_json::Value>, ApiError> {
    let (uuid, s) = lookup(state, id).await?;
    let guard = s.lock_owned().await;
    let st = blocking(move || {
        let mut guard = guard;
        f(&mut guard)
    })
    .await??;
    Ok(Json(json!({ "id": uuid, "state": st })))
}

async fn assign(
    AxumState(state): AxumState<AppState>,
    Path(id): Path<String>,
    Json(a): Json<UserAssignment>,
) -> Result<Json<serde_json::Value>, ApiError> {
    update(&state, &id, move |s| s.assign(a).cloned()).await
}

async fn retract(
    AxumState(state): AxumState<AppState>,
    Path(id): Path<String>,
    Json(r): Json<RetractRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    update(&state, &id, move |s| match r {
        RetractRequest::Index { index } => s.retract(index).cloned(),
        RetractRequest::Atom { atom } => s.retract_atom(&atom).cloned(),
    })
    .await
}

/// Serves the API on `addr` until the process ends.
pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router()).await
}
