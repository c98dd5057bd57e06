//! HTTP front end for the two pipelines.
//!
//! * `POST /v1/analyze/obstruction`, `POST /v1/analyze/vim`: analysis report
//! * `GET /v1/health`: `{"status": "ok"}`
//! * `GET /v1/config`: effective configuration with secrets redacted
//!
//! At most `max_concurrent_requests` analyses run at once; extra requests are
//! answered immediately with 429. A backend failure or a request exceeding
//! `request_timeout_ms` yields a report shaped by the fail policy.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use arsentinel_core::obstruction::ObstructionReport;
use arsentinel_core::vim::VimReport;
use arsentinel_core::{Engine, FailPolicy, PipelineError, PipelineFailure};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

use crate::api::{AnalyzeRequest, ErrorBody};
use crate::config::ServiceConfig;

#[derive(Debug)]
pub struct AppState {
    engine: Engine,
    config: ServiceConfig,
    permits: Arc<Semaphore>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Result<Self, arsentinel_core::config::ConfigError> {
        let engine = Engine::new(config.pipeline.clone())?;
        Ok(Self::with_engine(config, engine))
    }

    pub fn with_engine(config: ServiceConfig, engine: Engine) -> Self {
        Self {
            permits: Arc::new(Semaphore::new(config.max_concurrent_requests)),
            engine,
            config,
        }
    }

    fn timeout(&self) -> Duration {
        Duration::from_millis(self.config.request_timeout_ms)
    }

    fn policy(&self) -> FailPolicy {
        self.config.fail_policy
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/config", get(show_config))
        .route("/v1/analyze/obstruction", post(analyze_obstruction))
        .route("/v1/analyze/vim", post(analyze_vim))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn show_config(State(state): State<Arc<AppState>>) -> Json<ServiceConfig> {
    Json(state.config.redacted())
}

fn error(status: StatusCode, body: ErrorBody) -> Response {
    (status, Json(body)).into_response()
}

fn busy() -> Response {
    let mut resp = error(StatusCode::TOO_MANY_REQUESTS, ErrorBody::new("server at capacity, retry later"));
    resp.headers_mut()
        .insert(header::RETRY_AFTER, header::HeaderValue::from_static("1"));
    resp
}

/// Shared request path: admission, decoding, deadline, failure mapping.
async fn analyze<R, F, Fut>(state: &AppState, body: Bytes, run: F, fallback: fn(&PipelineFailure, FailPolicy) -> R) -> Response
where
    R: Serialize,
    F: FnOnce(arsentinel_core::model::ScenePair) -> Fut,
    Fut: Future<Output = Result<R, PipelineFailure>>,
{
    let Ok(_permit) = state.permits.clone().try_acquire_owned() else {
        tracing::warn!("rejecting request: at capacity");
        return busy();
    };
    let request: AnalyzeRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, ErrorBody::new(format!("malformed request: {e}"))),
    };
    let pair = match request.into_pair() {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, ErrorBody::new(e)),
    };
    let scene_id = pair.id.clone();
    let limit = state.timeout();
    let result = match tokio::time::timeout(limit, run(pair)).await {
        Ok(r) => r,
        Err(_) => Err(PipelineFailure {
            scene_id,
            error: PipelineError::Deadline {
                limit_ms: limit.as_millis() as u64,
            },
            latency: Default::default(),
        }),
    };
    match result {
        Ok(report) => Json(report).into_response(),
        Err(failure) => match &failure.error {
            PipelineError::InvalidScene(violations) => error(
                StatusCode::BAD_REQUEST,
                ErrorBody {
                    error: "invalid scene pair".into(),
                    details: violations.iter().map(|v| v.message.clone()).collect(),
                },
            ),
            PipelineError::Config(e) => error(StatusCode::INTERNAL_SERVER_ERROR, ErrorBody::new(e.to_string())),
            _ => {
                tracing::warn!(scene = %failure.scene_id, stage = failure.error.stage_name(), error = %failure.error, "analysis degraded by fail policy");
                Json(fallback(&failure, state.policy())).into_response()
            }
        },
    }
}

async fn analyze_obstruction(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let engine = &state.engine;
    analyze(&state, body, |pair| async move { engine.detect_obstruction(&pair).await }, ObstructionReport::from_failure).await
}

async fn analyze_vim(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let engine = &state.engine;
    analyze(&state, body, |pair| async move { engine.detect_vim(&pair).await }, VimReport::from_failure).await
}
