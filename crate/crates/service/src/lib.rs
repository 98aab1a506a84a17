//! JSON-over-HTTP facade for a trained grid model: recommendations,
//! explanations, feedback and inspection, all under `/v1`.
//!
//! One writer at a time: feedback, retraining and snapshots take the write
//! half of an `RwLock`; everything else reads. Each feedback event is
//! appended to the log before the model changes, and the log is replayed
//! over the saved model on start.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::RwLock;

use gridrec_core::mdp_env::{Action, Cell};
use gridrec_core::online_update::{
    replay, FeedbackEvent, FeedbackLog, OnlineError, OnlineLearner, RetrainSchedule,
};
use gridrec_core::persistence::{load_model, save_model, PersistError, SCHEMA_VERSION};
use gridrec_core::recommender::{explain, walk_and_recommend, RecommendationRequest};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Online(#[from] OnlineError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub model_path: PathBuf,
    pub log_path: PathBuf,
    /// Save the model every this many accepted feedback events; 0 disables.
    pub snapshot_every: u64,
    pub retrain: RetrainSchedule,
}

struct Inner {
    learner: OnlineLearner,
    log: FeedbackLog,
    since_snapshot: u64,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<RwLock<Inner>>,
    config: Arc<ServiceConfig>,
}

impl AppState {
    /// Loads the model and replays the feedback log over it.
    pub fn load(config: ServiceConfig) -> Result<Self, ServiceError> {
        let model = load_model(&config.model_path)?;
        let mut learner = OnlineLearner::new(model, config.retrain);
        let events = FeedbackLog::read_all(&config.log_path)?;
        let replayed = replay(&mut learner, &events)?;
        if replayed > 0 {
            log::info!("replayed {replayed} feedback events");
        }
        let log = FeedbackLog::open(&config.log_path)?;
        Ok(Self {
            inner: Arc::new(RwLock::new(Inner {
                learner,
                log,
                since_snapshot: replayed as u64,
            })),
            config: Arc::new(config),
        })
    }
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl ToString) -> Self {
        Self {
            status,
            message: message.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

fn internal(e: impl ToString) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e)
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/recommendations", post(recommendations))
        .route("/v1/feedback", post(feedback))
        .route("/v1/grid", get(grid))
        .route("/v1/q", get(q_table))
        .route("/v1/cell/{row}/{col}", get(cell))
        .route("/v1/health", get(health))
        .route("/v1/snapshot", post(snapshot))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecommendBody {
    profile: Vec<u32>,
    n: usize,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default = "default_max_steps")]
    max_steps: usize,
    #[serde(default)]
    seed: u64,
}

fn default_k() -> usize {
    RecommendationRequest::DEFAULT_K
}

fn default_epsilon() -> f64 {
    RecommendationRequest::DEFAULT_EPSILON
}

fn default_max_steps() -> usize {
    RecommendationRequest::DEFAULT_MAX_STEPS
}

async fn recommendations(
    State(state): State<AppState>,
    body: Result<Json<RecommendBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(body) = body?;
    let request = RecommendationRequest {
        profile: body.profile,
        n: body.n,
        k: body.k,
        epsilon: body.epsilon,
        max_steps: body.max_steps,
        seed: body.seed,
    };
    let inner = state.inner.read().await;
    let rec = walk_and_recommend(&inner.learner.model, &request)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    Ok(Json(rec).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    user: u32,
    cell: Cell,
    satisfied: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct FeedbackResponse {
    pub seq: u64,
    pub applied: bool,
    pub new_user_set_size: usize,
    pub retrained: bool,
}

fn check_cell(cell: Cell, n: usize) -> Result<(), ApiError> {
    cell.check(n)
        .map(|_| ())
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, e))
}

async fn feedback(
    State(state): State<AppState>,
    body: Result<Json<FeedbackBody>, JsonRejection>,
) -> ApiResult<FeedbackResponse> {
    let Json(body) = body?;
    let mut inner = state.inner.write().await;
    check_cell(body.cell, inner.learner.model.n())?;
    let event = FeedbackEvent {
        seq: inner.learner.model.feedback_seq + 1,
        user: body.user,
        cell: body.cell,
        satisfied: body.satisfied,
        ts: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0),
    };
    inner.log.append(&event).map_err(internal)?;
    let outcome = inner.learner.submit(&event).map_err(internal)?;
    inner.since_snapshot += 1;
    let every = state.config.snapshot_every;
    if every > 0 && inner.since_snapshot >= every {
        save_model(&inner.learner.model, &state.config.model_path).map_err(internal)?;
        inner.since_snapshot = 0;
        log::info!("snapshot at feedback_seq {}", event.seq);
    }
    Ok(Json(FeedbackResponse {
        seq: event.seq,
        applied: outcome.applied,
        new_user_set_size: outcome.user_set_size,
        retrained: outcome.retrained,
    }))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
    pub user_set_size: usize,
    pub item_set_size: usize,
    /// Largest Q-value over the cell's valid actions.
    pub max_q: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GridResponse {
    pub n: usize,
    pub feedback_seq: u64,
    pub cells: Vec<GridCell>,
}

async fn grid(State(state): State<AppState>) -> ApiResult<GridResponse> {
    let inner = state.inner.read().await;
    let model = &inner.learner.model;
    let cells = model
        .env()
        .cells()
        .map(|c| {
            let s = model.state(c).expect("cells come from the grid");
            GridCell {
                row: c.row,
                col: c.col,
                user_set_size: s.users.len(),
                item_set_size: s.items.len(),
                max_q: model.q.max_value(c),
            }
        })
        .collect();
    Ok(Json(GridResponse {
        n: model.n(),
        feedback_seq: model.feedback_seq,
        cells,
    }))
}

async fn q_table(State(state): State<AppState>) -> ApiResult<Value> {
    let inner = state.inner.read().await;
    let model = &inner.learner.model;
    let n = model.n();
    // Masked (off-grid) actions serialize as null.
    let values: Vec<Value> = model
        .q
        .values()
        .iter()
        .map(|&v| if v.is_finite() { json!(v) } else { Value::Null })
        .collect();
    let actions: Vec<Action> = Action::ALL.to_vec();
    Ok(Json(json!({
        "shape": [n, n, Action::ALL.len()],
        "actions": actions,
        "values": values,
        "feedback_seq": model.feedback_seq,
    })))
}

async fn cell(
    State(state): State<AppState>,
    Path((row, col)): Path<(usize, usize)>,
) -> Result<Response, ApiError> {
    let inner = state.inner.read().await;
    let model = &inner.learner.model;
    let cell = Cell::new(row, col);
    check_cell(cell, model.n())?;
    let explanation = explain(model, cell).map_err(|e| ApiError::new(StatusCode::NOT_FOUND, e))?;
    Ok(Json(explanation).into_response())
}

async fn health(State(state): State<AppState>) -> ApiResult<Value> {
    let inner = state.inner.read().await;
    Ok(Json(json!({
        "status": "ok",
        "model_version": SCHEMA_VERSION,
        "feedback_seq": inner.learner.model.feedback_seq,
    })))
}

/// Saves the model now. Refuses with 409 instead of waiting when another
/// request holds the model.
async fn snapshot(State(state): State<AppState>) -> ApiResult<Value> {
    let mut inner = state
        .inner
        .try_write()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "model is busy; retry the snapshot"))?;
    save_model(&inner.learner.model, &state.config.model_path).map_err(internal)?;
    inner.since_snapshot = 0;
    Ok(Json(json!({
        "saved": state.config.model_path.display().to_string(),
        "feedback_seq": inner.learner.model.feedback_seq,
    })))
}

impl AppState {
    /// Holds the write lock, as a mutation would. For tests of the 409 path.
    #[doc(hidden)]
    pub async fn hold_write(&self) -> tokio::sync::OwnedRwLockWriteGuard<impl Sized> {
        self.inner.clone().write_owned().await
    }
}

pub async fn serve(config: ServiceConfig, bind: &str) -> Result<(), ServiceError> {
    let state = AppState::load(config)?;
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    eprintln!("serving on http://{}/v1", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Runs [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(config: ServiceConfig, bind: &str) -> Result<(), ServiceError> {
    tokio::runtime::Runtime::new()?.block_on(serve(config, bind))
}
