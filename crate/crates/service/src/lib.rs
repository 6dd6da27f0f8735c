//! HTTP front end for the moderation cascade.
//!
//! `POST /moderate` takes a JSON [`ModerationRequest`] and answers with a
//! [`ModerationResponse`]. `GET /health` reports which backends are loaded.
//! Every response carries the `x-modcascade-schema` header.
//!
//! | status | `error.code`            | cause                                        |
//! |--------|-------------------------|----------------------------------------------|
//! | 200    |                         | moderated                                    |
//! | 400    | `malformed_request`     | body is not a valid request                  |
//! | 400    | `invalid_config`        | routing override fails validation            |
//! | 400    | `payload_not_supported` | inline payload sent to a replay-mode service |
//! | 404    | `unknown_image`         | no such image id                             |
//! | 502    | `backend_failure`       | a backend failed or is not configured        |
//!
//! Error bodies are `{"error": {"code": "...", "message": "..."}}`.
//!
//! Handlers read one immutable [`Snapshot`]; [`AppState::reload`] swaps it
//! atomically, so in-flight requests finish on the snapshot they started
//! with.

mod config;

use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};

pub use config::{ConfigError, ServiceConfig, DEFAULT_LISTEN, ENV_FIXTURES, ENV_LISTEN};

use modcascade::adapters::{BackendError, BackendMode, BackendSet, ImageRef};
use modcascade::pipeline::{
    PipelineError, RouteReason, Stage1Output, StageTimings, TEMPLATE_VERSION,
};
use modcascade::{ModerationDecision, Pipeline, Recommendation, Regime, RoutingConfig, Verdict};
use sha2::{Digest, Sha256};

pub const API_SCHEMA: &str = "modcascade.api/v1";
pub const SCHEMA_HEADER: &str = "x-modcascade-schema";

/// Exactly one of `id` and `payload` (base64) must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModerationRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RoutingConfig>,
}

impl ModerationRequest {
    pub fn for_id(id: impl Into<String>) -> Self {
        Self {
            id: Some(id.into()),
            payload: None,
            regime: None,
            config: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationResponse {
    pub image_id: String,
    pub regime: Regime,
    pub final_verdict: Verdict,
    pub recommendation: Recommendation,
    /// Present iff Stage 2 ran.
    pub analysis: Option<String>,
    pub routing_reason: RouteReason,
    pub stage2_invoked: bool,
    pub stage1: Stage1Output,
    pub timings: StageTimings,
    pub template_version: String,
}

impl From<ModerationDecision> for ModerationResponse {
    fn from(d: ModerationDecision) -> Self {
        Self {
            image_id: d.image_id,
            regime: d.regime,
            final_verdict: d.final_verdict,
            recommendation: d.recommendation,
            analysis: d.stage2.map(|s| s.analysis),
            routing_reason: d.routing.reason,
            stage2_invoked: d.routing.invoke_stage2,
            stage1: d.stage1,
            timings: d.timings,
            template_version: d.template_version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: ErrorBody,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code,
            message: message.into(),
        }
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let (status, code) = match e.backend_error() {
            Some(BackendError::UnknownImage(_)) => (StatusCode::NOT_FOUND, "unknown_image"),
            _ => (StatusCode::BAD_GATEWAY, "backend_failure"),
        };
        Self {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorResponse {
            error: ErrorBody {
                code: self.code.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HealthStatus {
    Healthy,
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: HealthStatus,
    pub missing: Vec<String>,
    pub mode: String,
    pub regime: Regime,
    pub routing: RoutingConfig,
    pub template_version: String,
    pub service_version: String,
    pub timestamp: u64,
}

/// Immutable per-server state: one backend set, one routing config.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pipeline: Pipeline,
    regime: Regime,
}

impl Snapshot {
    pub fn new(backends: BackendSet, routing: RoutingConfig, regime: Regime) -> Self {
        Self {
            pipeline: Pipeline::new(backends, routing),
            regime,
        }
    }

    pub fn from_pipeline(pipeline: Pipeline, regime: Regime) -> Self {
        Self { pipeline, regime }
    }

    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, ConfigError> {
        Ok(Self::new(cfg.backends()?, cfg.routing, cfg.regime))
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn moderate(&self, req: &ModerationRequest) -> Result<ModerationResponse, ApiError> {
        let image = match (&req.id, &req.payload) {
            (Some(id), None) if !id.trim().is_empty() => ImageRef::id(id.clone()),
            (None, Some(b64)) => {
                if self.pipeline.backends().mode == BackendMode::Replay {
                    return Err(ApiError::bad_request(
                        "payload_not_supported",
                        "replay backends resolve images by id only",
                    ));
                }
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64)
                    .map_err(|e| {
                        ApiError::bad_request(
                            "malformed_request",
                            format!("payload is not base64: {e}"),
                        )
                    })?;
                ImageRef::with_payload(payload_id(&bytes), bytes)
            }
            _ => {
                return Err(ApiError::bad_request(
                    "malformed_request",
                    "exactly one of `id` (non-empty) and `payload` is required",
                ))
            }
        };
        let pipeline = match req.config {
            Some(cfg) => {
                cfg.validate()
                    .map_err(|e| ApiError::bad_request("invalid_config", e.to_string()))?;
                self.pipeline.with_config(cfg)
            }
            None => self.pipeline.clone(),
        };
        let regime = req.regime.unwrap_or(self.regime);
        Ok(pipeline.moderate(&image, regime)?.into())
    }

    pub fn health(&self) -> Health {
        let missing: Vec<String> = self
            .pipeline
            .backends()
            .missing_components()
            .into_iter()
            .map(str::to_string)
            .collect();
        Health {
            status: if missing.is_empty() {
                HealthStatus::Healthy
            } else {
                HealthStatus::Degraded
            },
            missing,
            mode: match self.pipeline.backends().mode {
                BackendMode::Replay => "replay".into(),
                BackendMode::Live => "live".into(),
            },
            regime: self.regime,
            routing: *self.pipeline.config(),
            template_version: TEMPLATE_VERSION.to_string(),
            service_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// Stable id for an inline payload: `inline-` plus the first 16 hex digits
/// of its SHA-256. The bytes themselves go only to Stage 1 backends.
fn payload_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    format!("inline-{}", hex::encode(&digest[..8]))
}

pub struct AppState {
    snapshot: RwLock<Arc<Snapshot>>,
}

impl AppState {
    pub fn new(snapshot: Snapshot) -> Arc<Self> {
        Arc::new(Self {
            snapshot: RwLock::new(Arc::new(snapshot)),
        })
    }

    pub fn current(&self) -> Arc<Snapshot> {
        self.snapshot
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn reload(&self, snapshot: Snapshot) {
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(snapshot);
    }
}

async fn moderate(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<ModerationResponse>, ApiError> {
    let req: ModerationRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request("malformed_request", e.to_string()))?;
    let snapshot = state.current();
    // Backends may block; keep them off the async workers.
    tokio::task::spawn_blocking(move || snapshot.moderate(&req))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::BAD_GATEWAY,
            code: "backend_failure",
            message: e.to_string(),
        })?
        .map(Json)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(state.current().health())
}

async fn schema_header(mut res: Response) -> Response {
    res.headers_mut()
        .insert(SCHEMA_HEADER, HeaderValue::from_static(API_SCHEMA));
    res
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/moderate", post(moderate))
        .route("/health", get(health))
        .fallback(|| async {
            ApiError {
                status: StatusCode::NOT_FOUND,
                code: "not_found",
                message: "no such endpoint".into(),
            }
        })
        .layer(axum::middleware::map_response(schema_header))
        .with_state(state)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("binding {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

/// Binds `cfg.listen` and serves until the process exits. `on_ready` gets
/// the bound address, which differs from the configured one for port 0.
pub async fn serve(
    cfg: ServiceConfig,
    on_ready: impl FnOnce(std::net::SocketAddr),
) -> Result<(), ServeError> {
    let state = AppState::new(Snapshot::from_config(&cfg)?);
    let listener = tokio::net::TcpListener::bind(&cfg.listen)
        .await
        .map_err(|source| ServeError::Bind {
            addr: cfg.listen.clone(),
            source,
        })?;
    on_ready(listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_ids_are_stable() {
        assert_eq!(payload_id(b"abc"), payload_id(b"abc"));
        assert_ne!(payload_id(b"abc"), payload_id(b"abd"));
        assert!(payload_id(b"").starts_with("inline-"));
    }
}
