//! HTTP/JSON service exposing live episodes in which a person supplies the
//! external labels. State is polled; there is no push channel.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/sessions` | optional [`SessionConfig`] |
//! | GET | `/sessions/{id}` | |
//! | POST | `/sessions/{id}/advance` | `{"steps": n}` |
//! | GET | `/sessions/{id}/pending` | |
//! | POST | `/sessions/{id}/observations` | `{"option": k, "label": f}` |
//! | GET | `/sessions/{id}/efe` | |
//! | GET | `/sessions/{id}/snapshot` | |

pub mod error;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

pub use error::ApiError;
pub use session::{EfeView, Operation, Pending, Session, SessionConfig, SessionSnapshot, StateDocument};

type Shared = Arc<Mutex<Session>>;

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Shared>>>,
    next_id: Arc<AtomicU64>,
}

impl AppState {
    fn lookup(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions
            .read()
            .map_err(|_| ApiError::Internal("session table poisoned".into()))?
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session {id:?}")))
    }

    /// Runs `f` on the locked session off the async executor.
    async fn with_session<T, F>(&self, id: &str, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
    {
        let shared = self.lookup(id)?;
        tokio::task::spawn_blocking(move || {
            let mut guard = shared.lock().map_err(|_| ApiError::Internal("session lock poisoned".into()))?;
            f(&mut guard)
        })
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
    }
}

fn parse_body<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid JSON body: {e}")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvanceRequest {
    steps: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationRequest {
    option: usize,
    label: usize,
}

#[derive(Debug, Serialize)]
struct PendingDocument {
    step: usize,
    pending: Vec<Pending>,
}

#[derive(Debug, Serialize)]
struct EfeDocument {
    step: usize,
    scores: Vec<EfeView>,
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<StateDocument>), ApiError> {
    let config: SessionConfig = parse_body(&body)?;
    let id = format!("s{}", app.next_id.fetch_add(1, Ordering::Relaxed) + 1);
    let session = {
        let id = id.clone();
        tokio::task::spawn_blocking(move || Session::new(id, config))
            .await
            .map_err(|e| ApiError::Internal(e.to_string()))??
    };
    let doc = session.state()?;
    app.sessions
        .write()
        .map_err(|_| ApiError::Internal("session table poisoned".into()))?
        .insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(doc)))
}

async fn get_state(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<StateDocument>, ApiError> {
    Ok(Json(app.with_session(&id, |s| s.state()).await?))
}

async fn advance(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<StateDocument>, ApiError> {
    app.lookup(&id)?;
    let req: AdvanceRequest = parse_body(&body)?;
    Ok(Json(
        app.with_session(&id, move |s| {
            s.advance(req.steps)?;
            s.state()
        })
        .await?,
    ))
}

async fn list_pending(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<PendingDocument>, ApiError> {
    Ok(Json(app.with_session(&id, |s| Ok(PendingDocument { step: s.step(), pending: s.pending().to_vec() })).await?))
}

async fn submit_observation(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<oacmab::inference::UpdateAudit>, ApiError> {
    app.lookup(&id)?;
    if body.iter().all(u8::is_ascii_whitespace) {
        return Err(ApiError::BadRequest("body must be {\"option\": k, \"label\": f}".into()));
    }
    let req: ObservationRequest = parse_body(&body)?;
    Ok(Json(app.with_session(&id, move |s| s.submit(req.option, req.label)).await?))
}

async fn get_efe(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<EfeDocument>, ApiError> {
    Ok(Json(app.with_session(&id, |s| Ok(EfeDocument { step: s.step(), scores: s.efe()? })).await?))
}

async fn get_snapshot(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionSnapshot>, ApiError> {
    Ok(Json(app.with_session(&id, |s| Ok(s.snapshot())).await?))
}

async fn not_found() -> ApiError {
    ApiError::NotFound("no such endpoint".into())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_state))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/pending", get(list_pending))
        .route("/sessions/{id}/observations", post(submit_observation))
        .route("/sessions/{id}/efe", get(get_efe))
        .route("/sessions/{id}/snapshot", get(get_snapshot))
        .fallback(not_found)
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::default())).await
}
