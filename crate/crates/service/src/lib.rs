//! HTTP/JSON front end. A session is the offline state of one configuration;
//! it stays in memory until deleted so repeated solves skip factorization
//! and compression. Numerical work runs on the blocking pool, one job at a
//! time, since a single offline stage can take most of the machine's memory.

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use polartrace_api::dto::{
    ApiError, CreateSession, ErrorKind, Health, OracleRequest, OracleResponse, SessionInfo, SolveRequest, SolveResponse,
    SpectrumResponse, SweepRequest, SweepResponse,
};
use polartrace_core::experiment::{self, ExperimentError, Session};
use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

struct Entry {
    session: Arc<Session>,
    info: SessionInfo,
}

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Entry>>>,
    compute: Arc<Semaphore>,
}

impl Default for AppState {
    fn default() -> Self {
        Self { sessions: Arc::default(), compute: Arc::new(Semaphore::new(1)) }
    }
}

impl AppState {
    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    fn get(&self, id: &str) -> Result<(Arc<Session>, SessionInfo), Failure> {
        let map = self.sessions.read().expect("session map poisoned");
        map.get(id).map(|e| (e.session.clone(), e.info.clone())).ok_or_else(|| Failure::not_found(id))
    }

    /// Runs `job` on the blocking pool once the compute slot is free.
    async fn run<T: Send + 'static>(
        &self,
        job: impl FnOnce() -> Result<T, ExperimentError> + Send + 'static,
    ) -> Result<T, Failure> {
        let _permit = self.compute.acquire().await.map_err(|e| Failure::internal(e.to_string()))?;
        tokio::task::spawn_blocking(job).await.map_err(|e| Failure::internal(e.to_string()))?.map_err(Failure::from)
    }
}

/// Error response: status plus the JSON `ApiError` body.
#[derive(Debug)]
pub struct Failure(StatusCode, ApiError);

impl Failure {
    fn not_found(id: &str) -> Self {
        Failure(StatusCode::NOT_FOUND, ApiError { kind: ErrorKind::NotFound, message: format!("no session {id}") })
    }

    fn internal(message: String) -> Self {
        Failure(StatusCode::INTERNAL_SERVER_ERROR, ApiError { kind: ErrorKind::Internal, message })
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let message = e.to_string();
        if e.is_config() {
            Failure(StatusCode::BAD_REQUEST, ApiError { kind: ErrorKind::Config, message })
        } else {
            Failure(StatusCode::UNPROCESSABLE_ENTITY, ApiError { kind: ErrorKind::Numerical, message })
        }
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

async fn health(State(app): State<AppState>) -> Json<Health> {
    Json(Health { status: "ok".into(), sessions: app.session_count() })
}

async fn create_session(
    State(app): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionInfo>), Failure> {
    let id = uuid::Uuid::new_v4().to_string();
    let sid = id.clone();
    let (session, info) = app
        .run(move || {
            let s = Session::open(&req.config)?;
            let info = s.info(&sid);
            Ok((s, info))
        })
        .await?;
    tracing::info!(session = %id, nx = info.offline.nx, layers = info.offline.layers, "offline stage done");
    app.sessions
        .write()
        .expect("session map poisoned")
        .insert(id, Entry { session: Arc::new(session), info: info.clone() });
    Ok((StatusCode::CREATED, Json(info)))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionInfo>, Failure> {
    Ok(Json(app.get(&id)?.1))
}

async fn delete_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, Failure> {
    match app.sessions.write().expect("session map poisoned").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(Failure::not_found(&id)),
    }
}

async fn solve(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SolveRequest>,
) -> Result<Json<SolveResponse>, Failure> {
    let (session, _) = app.get(&id)?;
    Ok(Json(app.run(move || session.solve(&req)).await?))
}

async fn spectrum(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SpectrumResponse>, Failure> {
    let (session, _) = app.get(&id)?;
    Ok(Json(app.run(move || session.spectrum()).await?))
}

async fn sweep(State(app): State<AppState>, Json(req): Json<SweepRequest>) -> Result<Json<SweepResponse>, Failure> {
    Ok(Json(app.run(move || experiment::run_sweep(&req.config)).await?))
}

async fn oracle_check(State(app): State<AppState>, Json(req): Json<OracleRequest>) -> Result<Json<OracleResponse>, Failure> {
    Ok(Json(app.run(move || experiment::oracle_check(&req.config)).await?))
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/solve", post(solve))
        .route("/sessions/{id}/spectrum", post(spectrum))
        .route("/sweep", post(sweep))
        .route("/oracle-check", post(oracle_check))
        .with_state(app)
}

/// Serves until the task is dropped.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::default())).await
}

/// Binds `addr` and serves on a background task; returns the bound address.
pub async fn spawn(addr: &str) -> std::io::Result<std::net::SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = serve(listener).await {
            tracing::error!("service stopped: {e}");
        }
    });
    Ok(local)
}
