//! JSON-over-HTTP surface under `/api/v1`. Handlers run engine calls on the
//! blocking pool (provider clients are synchronous); the engine mutex is the
//! single writer.

use std::path::PathBuf;
use std::sync::{Arc, Mutex, PoisonError};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use mtloop_core::providers::ProviderError;
use mtloop_core::scheduler::Strategy;
use mtloop_core::store::StoreError;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::engine::{Engine, EngineError, IngestRequest, SubmitRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        use EngineError as E;
        let (status, code) = match &e {
            E::PoolEmpty => (StatusCode::NO_CONTENT, "pool_empty"),
            E::UnknownAnnotator(_) => (StatusCode::NOT_FOUND, "unknown_annotator"),
            E::UnknownSegment(_) => (StatusCode::NOT_FOUND, "unknown_segment"),
            E::DuplicateSegment(_) => (StatusCode::CONFLICT, "duplicate_segment"),
            E::StaleSegment(_) => (StatusCode::CONFLICT, "stale_segment"),
            E::LeaseExpired(_) => (StatusCode::CONFLICT, "lease_expired"),
            E::NotLeased { .. } => (StatusCode::CONFLICT, "not_leased"),
            E::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation_failure"),
            E::OutOfRange(_) => (StatusCode::UNPROCESSABLE_ENTITY, "out_of_range"),
            E::Provider(ProviderError::Timeout { .. }) => (StatusCode::GATEWAY_TIMEOUT, "provider_timeout"),
            E::Provider(_) => (StatusCode::BAD_GATEWAY, "provider_error"),
            E::Store(StoreError::StorageFull { .. }) => (StatusCode::INSUFFICIENT_STORAGE, "storage_full"),
            E::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "store_error"),
            E::SchemaMismatch { .. } | E::Learner(_) | E::Feature(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status == StatusCode::NO_CONTENT {
            return StatusCode::NO_CONTENT.into_response();
        }
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

pub type SharedEngine = Arc<Mutex<Engine>>;

#[derive(Clone)]
struct AppState {
    engine: SharedEngine,
    auth_token: Option<Arc<str>>,
    batch_size: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RouterOptions {
    /// Required as `Authorization: Bearer <token>` on every `/api/v1` route but health.
    pub auth_token: Option<String>,
    /// Upper bound for `/api/v1/segments/batch`.
    pub batch_size: usize,
    /// Static bundle served at `/app`.
    pub webapp_dir: Option<PathBuf>,
}

async fn run<T, F>(st: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Engine) -> Result<T, EngineError> + Send + 'static,
{
    let engine = Arc::clone(&st.engine);
    tokio::task::spawn_blocking(move || {
        let mut guard = engine.lock().unwrap_or_else(PoisonError::into_inner);
        f(&mut guard)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
    .map_err(ApiError::from)
}

async fn require_token(State(st): State<AppState>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(token) = &st.auth_token {
        let presented = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_ref()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

pub fn router(engine: SharedEngine, opts: RouterOptions) -> Router {
    let st = AppState {
        engine,
        auth_token: opts.auth_token.map(Arc::from),
        batch_size: opts.batch_size.max(1),
    };
    let api = Router::new()
        .route("/segments", post(ingest))
        .route("/segments/next", get(next_sample))
        .route("/segments/batch", get(next_batch))
        .route("/annotations", post(submit))
        .route("/admin/stats", get(stats))
        .route("/admin/threshold", put(set_threshold))
        .route("/admin/weights", put(set_weights))
        .route("/admin/auto-label", post(auto_label))
        .route("/admin/segments", get(segments))
        .route("/admin/annotators", get(annotators))
        .route("/export/corpus", get(export_corpus))
        .route_layer(middleware::from_fn_with_state(st.clone(), require_token))
        .route("/health", get(health));
    let mut app = Router::new().nest("/api/v1", api).with_state(st);
    if let Some(dir) = opts.webapp_dir {
        app = app.nest_service("/app", ServeDir::new(dir));
    }
    app
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    last_seq: u64,
}

async fn health(State(st): State<AppState>) -> Result<Json<Health>, ApiError> {
    let last_seq = run(&st, |e| Ok(e.state().last_seq)).await?;
    Ok(Json(Health { status: "ok", last_seq }))
}

async fn ingest(State(st): State<AppState>, body: Result<Json<IngestRequest>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let seg = run(&st, move |e| e.ingest(req)).await?;
    Ok((StatusCode::CREATED, Json(seg)).into_response())
}

#[derive(Debug, Deserialize)]
struct NextParams {
    annotator: String,
    strategy: Option<String>,
    /// Salt for the `random` strategy.
    seed: Option<u64>,
    count: Option<usize>,
}

impl NextParams {
    fn strategy(&self) -> Result<Option<Strategy>, ApiError> {
        let Some(name) = &self.strategy else { return Ok(None) };
        match Strategy::parse(name) {
            Some(Strategy::Random { .. }) => Ok(Some(Strategy::Random {
                salt: self.seed.unwrap_or(0),
            })),
            Some(s) => Ok(Some(s)),
            None => Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "out_of_range",
                format!("unknown strategy `{name}`"),
            )),
        }
    }
}

async fn next_sample(State(st): State<AppState>, q: Result<Query<NextParams>, QueryRejection>) -> Result<Response, ApiError> {
    let Query(p) = q?;
    let strategy = p.strategy()?;
    let sample = run(&st, move |e| e.next_sample(&p.annotator, strategy)).await?;
    Ok(Json(sample).into_response())
}

async fn next_batch(State(st): State<AppState>, q: Result<Query<NextParams>, QueryRejection>) -> Result<Response, ApiError> {
    let Query(p) = q?;
    let strategy = p.strategy()?;
    let count = p.count.unwrap_or(st.batch_size).min(st.batch_size);
    let batch = run(&st, move |e| e.next_batch(&p.annotator, strategy, count)).await?;
    Ok(Json(batch).into_response())
}

async fn submit(State(st): State<AppState>, body: Result<Json<SubmitRequest>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let receipt = run(&st, move |e| e.submit(req)).await?;
    Ok(Json(receipt).into_response())
}

async fn stats(State(st): State<AppState>) -> Result<Response, ApiError> {
    Ok(Json(run(&st, |e| e.stats()).await?).into_response())
}

#[derive(Debug, Deserialize)]
struct ThresholdBody {
    tau: f64,
}

async fn set_threshold(State(st): State<AppState>, body: Result<Json<ThresholdBody>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(b) = body?;
    Ok(Json(run(&st, move |e| e.set_threshold(b.tau)).await?).into_response())
}

#[derive(Debug, Deserialize)]
struct WeightsBody {
    quality: f64,
    ter: f64,
    llm: f64,
}

async fn set_weights(State(st): State<AppState>, body: Result<Json<WeightsBody>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(b) = body?;
    Ok(Json(run(&st, move |e| e.set_weights(b.quality, b.ter, b.llm)).await?).into_response())
}

async fn auto_label(State(st): State<AppState>) -> Result<Response, ApiError> {
    Ok(Json(run(&st, |e| e.auto_label()).await?).into_response())
}

#[derive(Debug, Deserialize)]
struct SegmentsParams {
    rated: Option<bool>,
}

async fn segments(State(st): State<AppState>, q: Result<Query<SegmentsParams>, QueryRejection>) -> Result<Response, ApiError> {
    let Query(p) = q?;
    Ok(Json(run(&st, move |e| Ok(e.segments_overview(p.rated))).await?).into_response())
}

async fn annotators(State(st): State<AppState>) -> Result<Response, ApiError> {
    Ok(Json(run(&st, |e| Ok(e.annotators())).await?).into_response())
}

async fn export_corpus(State(st): State<AppState>) -> Result<Response, ApiError> {
    let body = run(&st, |e| Ok(e.export_corpus())).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

/// Serves `app` on `bind` until Ctrl-C.
pub async fn serve(app: Router, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
