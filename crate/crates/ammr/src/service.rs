//! HTTP front end: sessions, catalog paging, refinement episodes and
//! feedback. Episodes are CPU-bound and run on the blocking pool; each
//! session's memory sits behind its own mutex, so requests on one session
//! are serialized.

use std::sync::Arc;
use std::time::Instant;

use ammr_core::catalog::Item;
use ammr_core::composer::ComposerVariant;
use ammr_core::constraints::ConstraintSet;
use ammr_core::guard::GuardReport;
use ammr_core::pipeline::{Anchor, Engine};
use ammr_core::planner::{run_episode, EpisodeRequest, PlannerTrace, RecommendedItem};
use ammr_core::session::{apply_feedback, derive_weights, SessionMemory, SessionStore, SessionWeights, Verdict};
use ammr_core::Error as CoreError;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const DEFAULT_PAGE: usize = 24;
pub const MAX_PAGE: usize = 500;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub sessions: Arc<SessionStore>,
}

impl AppState {
    pub fn new(engine: Engine) -> Self {
        Self {
            engine: Arc::new(engine),
            sessions: Arc::new(SessionStore::new()),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/catalog/items", get(catalog_items))
        .route("/sessions/{id}/refine", post(refine))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/memory", get(memory))
        .with_state(state)
}

/// Error body: `{"error": code, "field": name?, "message": text}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, field: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            error: code.to_string(),
            field: field.map(str::to_string),
            message: message.into(),
        }
    }

    fn bad_request(code: &str, field: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, Some(field), message)
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", None, format!("no session `{id}`"))
    }

    fn unknown_item(id: &str, field: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_item", Some(field), format!("unknown item `{id}`"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_body", Some("body"), r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_query", Some("query"), r.body_text())
    }
}

/// Maps engine errors raised while serving a refine request.
fn from_core(e: CoreError, anchor_field: &str) -> ApiError {
    match e {
        CoreError::UnknownItem(id) => ApiError::unknown_item(&id, anchor_field),
        CoreError::Dimension { .. } => ApiError::bad_request("invalid_anchor_vector", "anchor_vector", e.to_string()),
        CoreError::Parse(m) => ApiError::bad_request("unparseable_text", "text", m),
        CoreError::Config(m) => ApiError::bad_request("invalid_request", "body", m),
        CoreError::Schema { .. } => ApiError::bad_request("invalid_request", "text", e.to_string()),
        other => {
            log::error!("refine failed: {other}");
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", None, other.to_string())
        }
    }
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn create_session(State(state): State<AppState>) -> (StatusCode, Json<serde_json::Value>) {
    let id = state.sessions.create();
    log::info!("session {id} created");
    (StatusCode::CREATED, Json(json!({"session_id": id})))
}

#[derive(Debug, Deserialize)]
pub struct PageParams {
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CatalogPage {
    pub items: Vec<Item>,
    pub offset: usize,
    pub limit: usize,
    pub total: usize,
}

async fn catalog_items(
    State(state): State<AppState>,
    params: Result<Query<PageParams>, QueryRejection>,
) -> Result<Json<CatalogPage>, ApiError> {
    let Query(p) = params?;
    let offset = p.offset.unwrap_or(0);
    let limit = p.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request(
            "invalid_limit",
            "limit",
            format!("limit must be in 1..={MAX_PAGE}"),
        ));
    }
    let all = state.engine.catalog.items();
    let items = all.iter().skip(offset).take(limit).cloned().collect();
    Ok(Json(CatalogPage {
        items,
        offset,
        limit,
        total: all.len(),
    }))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RefineRequest {
    #[serde(default)]
    pub anchor_item_id: Option<String>,
    #[serde(default)]
    pub anchor_vector: Option<Vec<f64>>,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub composer: Option<String>,
}

/// A directive as the console shows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintChip {
    pub id: String,
    pub label: String,
    pub hard: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub episode_us: u64,
    pub total_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineResponse {
    pub session_id: String,
    pub constraints: ConstraintSet,
    pub chips: Vec<ConstraintChip>,
    pub results: Vec<RecommendedItem>,
    pub explanation: Option<String>,
    pub guard: GuardReport,
    pub trace: PlannerTrace,
    pub cycles: usize,
    pub trend_hits: Vec<String>,
    pub memory_weights: SessionWeights,
    pub timings: Timings,
}

fn validate_refine(req: &RefineRequest) -> Result<(Anchor, Option<ComposerVariant>), ApiError> {
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("empty_text", "text", "text must not be empty"));
    }
    let anchor = match (&req.anchor_item_id, &req.anchor_vector) {
        (Some(id), None) => Anchor::Item(id.clone()),
        (None, Some(v)) => Anchor::Vector(v.clone()),
        _ => {
            return Err(ApiError::bad_request(
                "invalid_anchor",
                "anchor_item_id",
                "exactly one of anchor_item_id and anchor_vector is required",
            ))
        }
    };
    if req.k == Some(0) {
        return Err(ApiError::bad_request("invalid_k", "k", "k must be at least 1"));
    }
    let composer = req
        .composer
        .as_deref()
        .map(ComposerVariant::parse)
        .transpose()
        .map_err(|e| ApiError::bad_request("unknown_composer", "composer", e.to_string()))?;
    Ok((anchor, composer))
}

async fn refine(
    State(state): State<AppState>,
    Path(session_id): Path<String>,
    body: Result<Json<RefineRequest>, JsonRejection>,
) -> Result<Json<RefineResponse>, ApiError> {
    let start = Instant::now();
    let session = state
        .sessions
        .get(&session_id)
        .ok_or_else(|| ApiError::unknown_session(&session_id))?;
    let Json(req) = body?;
    let (anchor, composer) = validate_refine(&req)?;
    let anchor_field = if matches!(anchor, Anchor::Item(_)) { "anchor_item_id" } else { "anchor_vector" };
    let engine = Arc::clone(&state.engine);

    let joined = tokio::task::spawn_blocking(move || {
        let mut memory = session.lock().expect("session poisoned");
        let weights = derive_weights(&memory, &engine.schema);
        let mut episode = EpisodeRequest::new(anchor, req.text.clone());
        episode.result_k = req.k;
        episode.composer = composer;
        episode.weights = (!weights.is_identity()).then(|| weights.clone());
        let t = Instant::now();
        let outcome = run_episode(&engine, episode)?;
        let episode_us = t.elapsed().as_micros() as u64;
        for token in &outcome.trend_hits {
            memory.push_token(token);
        }
        let chips = outcome
            .constraints
            .directives
            .iter()
            .map(|d| ConstraintChip {
                id: d.id.clone(),
                label: d.render(&engine.schema),
                hard: d.kind.is_hard(),
            })
            .collect();
        Ok::<_, CoreError>((outcome, chips, weights, episode_us, memory.session_id.clone()))
    })
    .await;
    let (outcome, chips, weights, episode_us, session_id) = match joined {
        Ok(r) => r.map_err(|e| from_core(e, anchor_field))?,
        Err(e) => {
            return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", None, e.to_string()));
        }
    };
    Ok(Json(RefineResponse {
        session_id,
        constraints: outcome.constraints,
        chips,
        results: outcome.recommendation.results,
        explanation: outcome.recommendation.explanation,
        guard: outcome.guard,
        trace: outcome.trace,
        cycles: outcome.cycles,
        trend_hits: outcome.trend_hits,
        memory_weights: weights,
        timings: Timings {
            episode_us,
            total_us: start.elapsed().as_micros() as u64,
        },
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub item_id: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryView {
    pub memory: SessionMemory,
    pub weights: SessionWeights,
}

async fn feedback(
    State(state): State<AppState>,
    Path(session_id): Path<String>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Result<Json<MemoryView>, ApiError> {
    let session = state
        .sessions
        .get(&session_id)
        .ok_or_else(|| ApiError::unknown_session(&session_id))?;
    let Json(req) = body?;
    let engine = &state.engine;
    let item = engine
        .catalog
        .get(&req.item_id)
        .ok_or_else(|| ApiError::unknown_item(&req.item_id, "item_id"))?;
    let mut memory = session.lock().expect("session poisoned");
    *memory = apply_feedback(&memory, item, req.verdict, &engine.schema);
    Ok(Json(MemoryView {
        weights: derive_weights(&memory, &engine.schema),
        memory: memory.clone(),
    }))
}

async fn memory(State(state): State<AppState>, Path(session_id): Path<String>) -> Result<Json<MemoryView>, ApiError> {
    let session = state
        .sessions
        .get(&session_id)
        .ok_or_else(|| ApiError::unknown_session(&session_id))?;
    let memory = session.lock().expect("session poisoned").clone();
    Ok(Json(MemoryView {
        weights: derive_weights(&memory, &state.engine.schema),
        memory,
    }))
}
