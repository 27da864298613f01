//! HTTP API over a [`Store`].

use crate::store::{Store, StoreError, Submission};
use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

pub type SharedStore = Arc<Mutex<Store>>;

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Directory with the built web app, served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Allowed CORS origins; empty allows any.
    pub cors_origins: Vec<String>,
}

pub struct ApiError(StoreError);

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self(e)
    }
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match &self.0 {
            StoreError::MissingAnnotator => StatusCode::BAD_REQUEST,
            StoreError::UnknownPair(_) => StatusCode::NOT_FOUND,
            StoreError::Duplicate { .. }
            | StoreError::NoAssignment { .. }
            | StoreError::PairComplete(_)
            | StoreError::NoCompletePairs => StatusCode::CONFLICT,
            StoreError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StoreError::Corrupt { .. } | StoreError::Experiment(_) | StoreError::Io(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

fn lock(store: &SharedStore) -> std::sync::MutexGuard<'_, Store> {
    store.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Deserialize)]
struct NextQuery {
    #[serde(default)]
    annotator: String,
}

async fn next_task(State(store): State<SharedStore>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    let task = lock(&store).next_task(&q.annotator)?;
    Ok(match task {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(State(store): State<SharedStore>, body: Bytes) -> Result<Response, ApiError> {
    let submission: Submission =
        serde_json::from_slice(&body).map_err(|e| StoreError::Invalid(e.to_string()))?;
    let annotation = lock(&store).submit(submission)?;
    Ok((StatusCode::CREATED, Json(annotation)).into_response())
}

async fn progress(State(store): State<SharedStore>) -> Response {
    Json(lock(&store).progress()).into_response()
}

async fn results(State(store): State<SharedStore>) -> Result<Response, ApiError> {
    Ok(Json(lock(&store).results()?).into_response())
}

pub fn router(store: SharedStore, options: &ServerOptions) -> Router {
    let origins = if options.cors_origins.is_empty() {
        AllowOrigin::from(Any)
    } else {
        AllowOrigin::list(options.cors_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    let cors = CorsLayer::new()
        .allow_origin(origins)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    let api = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/annotations", post(submit))
        .route("/api/progress", get(progress))
        .route("/api/results", get(results))
        .with_state(store);
    let app = match &options.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(cors)
}

/// Serves until the process is stopped.
pub async fn serve(store: Store, addr: SocketAddr, options: ServerOptions) -> std::io::Result<()> {
    let app = router(Arc::new(Mutex::new(store)), &options);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}
