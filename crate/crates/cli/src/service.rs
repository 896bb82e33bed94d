//! HTTP wrapper around environment sessions.
//!
//! ```text
//! POST   /sessions                  SessionInit JSON   -> 201 {session_id, observation}
//! POST   /sessions/{id}/step        {raw_text, token_count?} -> StepOutcome JSON
//! GET    /sessions/{id}/trajectory  -> Trajectory JSON
//! DELETE /sessions/{id}             -> 204
//! ```
//!
//! Errors come back as `{"error": message}` with 400 (bad request or unknown
//! database), 404 (unknown session) or 409 (session already terminal).

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sqlexplore::protocol::{Observation, Trajectory};
use sqlexplore::sqlenv::{EnvError, SessionInit, StepOutcome};
use sqlexplore::{DatabaseRegistry, Session};

type SessionMap = Mutex<HashMap<String, Arc<Mutex<Session>>>>;

#[derive(Clone)]
pub struct AppState {
    registry: Arc<DatabaseRegistry>,
    sessions: Arc<SessionMap>,
}

impl AppState {
    pub fn new(registry: DatabaseRegistry) -> Self {
        Self { registry: Arc::new(registry), sessions: Arc::default() }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session map poisoned").len()
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
    /// The schema prefill, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    pub raw_text: String,
    #[serde(default)]
    pub token_count: Option<u32>,
}

#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<EnvError> for ApiError {
    fn from(e: EnvError) -> Self {
        let status = match e {
            EnvError::SessionTerminal => StatusCode::CONFLICT,
            EnvError::UnknownDatabase(_) | EnvError::InvalidSession(_) => StatusCode::BAD_REQUEST,
            EnvError::Open { .. } | EnvError::Registry(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(StatusCode::BAD_REQUEST, e.body_text())
    }
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}"))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}/trajectory", get(get_trajectory))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .with_state(state)
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<SessionInit>, JsonRejection>,
) -> Result<(StatusCode, Json<CreatedSession>), ApiError> {
    let Json(init) = body?;
    let id = uuid::Uuid::new_v4().to_string();
    let registry = state.registry.clone();
    let session_id = id.clone();
    let session = tokio::task::spawn_blocking(move || Session::open(&registry, session_id, init))
        .await
        .map_err(join_error)??;
    let observation = session.initial_observation().cloned();
    state.sessions.lock().expect("session map poisoned").insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(CreatedSession { session_id: id, observation })))
}

async fn step_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<StepRequest>, JsonRejection>,
) -> Result<Json<StepOutcome>, ApiError> {
    let Json(req) = body?;
    let session = state.get(&id)?;
    let outcome = tokio::task::spawn_blocking(move || {
        let mut s = session.lock().expect("session poisoned");
        s.step_raw(&req.raw_text, req.token_count)
    })
    .await
    .map_err(join_error)??;
    Ok(Json(outcome))
}

async fn get_trajectory(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Trajectory>, ApiError> {
    let session = state.get(&id)?;
    let trajectory = session.lock().expect("session poisoned").trajectory().clone();
    Ok(Json(trajectory))
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    match state.sessions.lock().expect("session map poisoned").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError(StatusCode::NOT_FOUND, format!("unknown session `{id}`"))),
    }
}

/// Serves until ctrl-c.
pub async fn serve(registry: DatabaseRegistry, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(registry)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
