//! Multi-annotator labelling over HTTP.
//!
//! The service owns one [`AnnotationStore`] and exposes it as a small JSON
//! API plus a static page under `/ui`. Every accepted label is on disk
//! before the response is sent; resolution happens only on the server.
//!
//! | method | path | body / query |
//! |---|---|---|
//! | GET | `/tasks` | `?status=open\|complete\|discarded&annotator=ID` |
//! | GET | `/tasks/{id}` | `?annotator=ID` |
//! | POST | `/tasks/{id}/label` | `{"annotator_id", "verdict", "timestamp"?}` |
//! | GET | `/progress` | |
//! | GET | `/decisions` | |
//! | POST | `/finalize` | |

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use concord_core::annotation::{
    now_millis, AnnotationStore, Progress, ResolvedDecision, SubmitError, SubmitOutcome, TaskView,
    Verdict,
};
use concord_core::pairing::TaskStatus;
use concord_core::Error;

const INDEX_HTML: &str = include_str!("../assets/index.html");

#[derive(Clone)]
pub struct AppState {
    store: Arc<Mutex<AnnotationStore>>,
    /// Top-1 retrieval score per task, shown only when configured.
    scores: Arc<HashMap<String, f64>>,
    show_scores: bool,
}

impl AppState {
    pub fn new(store: AnnotationStore) -> Self {
        AppState {
            store: Arc::new(Mutex::new(store)),
            scores: Arc::new(HashMap::new()),
            show_scores: false,
        }
    }

    pub fn with_scores(mut self, scores: HashMap<String, f64>, show: bool) -> Self {
        self.scores = Arc::new(scores);
        self.show_scores = show;
        self
    }

    fn payload(&self, view: TaskView) -> TaskPayload {
        let retrieval_score = if self.show_scores {
            self.scores.get(&view.task_id).copied()
        } else {
            None
        };
        TaskPayload {
            view,
            retrieval_score,
        }
    }

    /// Runs `f` on the store off the async executor.
    async fn with_store<R: Send + 'static>(
        &self,
        f: impl FnOnce(&mut AnnotationStore) -> R + Send + 'static,
    ) -> Result<R, ApiError> {
        let store = Arc::clone(&self.store);
        tokio::task::spawn_blocking(move || {
            let mut guard = store.lock().unwrap_or_else(|p| p.into_inner());
            f(&mut guard)
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskPayload {
    #[serde(flatten)]
    pub view: TaskView,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_score: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub annotator_id: String,
    pub verdict: Verdict,
    /// Milliseconds since the epoch; the server clock is used when absent.
    #[serde(default)]
    pub timestamp: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
pub struct ListQuery {
    pub status: Option<TaskStatus>,
    pub annotator: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
pub struct ViewQuery {
    pub annotator: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FinalizeResponse {
    pub decisions_path: String,
    pub progress: Progress,
}

/// `{"error": kind, "detail": message}` with a matching status code.
#[derive(Debug, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    pub detail: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, detail: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            error: error.to_string(),
            detail: detail.into(),
        }
    }

    fn internal(detail: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", detail)
    }
}

impl From<SubmitError> for ApiError {
    fn from(e: SubmitError) -> Self {
        match &e {
            SubmitError::UnknownTask(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_task", e.to_string()),
            SubmitError::Finalized(_) => ApiError::new(StatusCode::CONFLICT, "finalized", e.to_string()),
            SubmitError::Invalid(_) => ApiError::new(StatusCode::BAD_REQUEST, "invalid", e.to_string()),
            SubmitError::Store(inner) => ApiError::from_core(inner),
        }
    }
}

impl ApiError {
    fn from_core(e: &Error) -> Self {
        match e {
            Error::Validation(_) | Error::Usage(_) => {
                ApiError::new(StatusCode::BAD_REQUEST, "invalid", e.to_string())
            }
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

async fn list_tasks(
    State(state): State<AppState>,
    Query(q): Query<ListQuery>,
) -> Result<Json<Vec<TaskPayload>>, ApiError> {
    let views = state
        .with_store(move |s| s.list(q.status, q.annotator.as_deref()))
        .await?;
    Ok(Json(views.into_iter().map(|v| state.payload(v)).collect()))
}

async fn get_task(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ViewQuery>,
) -> Result<Json<TaskPayload>, ApiError> {
    let lookup = id.clone();
    let view = state
        .with_store(move |s| s.view(&lookup, q.annotator.as_deref()))
        .await?;
    match view {
        Some(v) => Ok(Json(state.payload(v))),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_task", format!("unknown task {id}"))),
    }
}

async fn post_label(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<LabelRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<SubmitOutcome>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid", e.body_text()))?;
    let out = state
        .with_store(move |s| {
            let ts = req.timestamp.unwrap_or_else(now_millis);
            s.submit(&id, &req.annotator_id, req.verdict, ts)
        })
        .await??;
    Ok(Json(out))
}

async fn progress(State(state): State<AppState>) -> Result<Json<Progress>, ApiError> {
    Ok(Json(state.with_store(|s| s.progress()).await?))
}

async fn decisions(State(state): State<AppState>) -> Result<Json<Vec<ResolvedDecision>>, ApiError> {
    Ok(Json(state.with_store(|s| s.decisions()).await?))
}

async fn finalize(State(state): State<AppState>) -> Result<Json<FinalizeResponse>, ApiError> {
    let res = state
        .with_store(|s| s.finalize().map(|p| (p, s.progress())))
        .await?;
    let (path, progress) = res.map_err(|e| ApiError::from_core(&e))?;
    Ok(Json(FinalizeResponse {
        decisions_path: path.display().to_string(),
        progress,
    }))
}

async fn index() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "text/html; charset=utf-8")], INDEX_HTML)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/tasks", get(list_tasks))
        .route("/tasks/:id", get(get_task))
        .route("/tasks/:id/label", post(post_label))
        .route("/progress", get(progress))
        .route("/decisions", get(decisions))
        .route("/finalize", post(finalize))
        .route("/ui", get(index))
        .route("/ui/", get(index))
        .fallback(not_found)
        .with_state(state)
}

/// Serves until `shutdown` resolves, then syncs the label log.
pub async fn serve(
    addr: SocketAddr,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on http://{}", listener.local_addr()?);
    let store = Arc::clone(&state.store);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    let mut guard = store.lock().unwrap_or_else(|p| p.into_inner());
    guard
        .flush()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    log::info!("annotation service stopped");
    Ok(())
}
