//! HTTP routes. Every error body is `{"error": <code>, "message": <text>}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::multipart::Multipart;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use markguard_core::decision::CostMatrix;
use markguard_core::raster::{CaptureMeta, Venue};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::service::{Service, DEFAULT_BUDGETS};

/// Room for multipart framing and the meta fields on top of the image.
const MULTIPART_OVERHEAD: usize = 64 * 1024;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!("{self}");
        }
        let body = serde_json::json!({ "error": self.code(), "message": self.to_string() });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

pub fn router(service: Arc<Service>) -> Router {
    let body_limit = service.config().payload_limit + MULTIPART_OVERHEAD;
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/authenticate", post(authenticate))
        .route("/v1/feedback", post(feedback))
        .route("/v1/feedback/export", get(export))
        .route("/v1/thresholds", put(set_thresholds).get(thresholds))
        .route("/v1/metrics", get(metrics))
        .route("/v1/models", get(models))
        .route("/v1/models/{version}/activate", post(activate))
        .route("/v1/tradeoff", get(tradeoff))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(service)
}

/// Runs `f` on the blocking pool; scoring and log appends do file I/O and
/// CPU work.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Default)]
struct MetaFields {
    device_id: Option<String>,
    venue: Option<String>,
    captured_at: Option<String>,
}

impl MetaFields {
    /// `None` when no meta field was sent. Missing fields default to an
    /// unknown device and venue, captured now.
    fn into_meta(self) -> ApiResult<Option<CaptureMeta>> {
        if self.device_id.is_none() && self.venue.is_none() && self.captured_at.is_none() {
            return Ok(None);
        }
        let venue = match self.venue.as_deref() {
            Some(v) => v.parse::<Venue>().map_err(ServiceError::BadRequest)?,
            None => Venue::Unknown,
        };
        let captured_at = match self.captured_at.as_deref() {
            Some(t) => DateTime::parse_from_rfc3339(t)
                .map_err(|e| ServiceError::BadRequest(format!("captured_at: {e}")))?
                .with_timezone(&Utc),
            None => Utc::now(),
        };
        Ok(Some(CaptureMeta {
            device_id: self.device_id.unwrap_or_else(|| "unknown".into()),
            venue,
            captured_at,
        }))
    }
}

fn multipart_error(e: axum::extract::multipart::MultipartError, limit: usize) -> ServiceError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ServiceError::PayloadTooLarge { limit }
    } else {
        ServiceError::BadRequest(e.body_text())
    }
}

async fn authenticate(State(svc): State<Arc<Service>>, mut form: Multipart) -> ApiResult<Response> {
    let limit = svc.config().payload_limit;
    let mut image: Option<Bytes> = None;
    let mut meta = MetaFields::default();
    while let Some(field) = form.next_field().await.map_err(|e| multipart_error(e, limit))? {
        let name = field.name().unwrap_or_default().to_string();
        match name.as_str() {
            "image" => image = Some(field.bytes().await.map_err(|e| multipart_error(e, limit))?),
            "device_id" | "venue" | "captured_at" => {
                let text = field.text().await.map_err(|e| multipart_error(e, limit))?;
                let slot = match name.as_str() {
                    "device_id" => &mut meta.device_id,
                    "venue" => &mut meta.venue,
                    _ => &mut meta.captured_at,
                };
                *slot = Some(text);
            }
            other => return Err(ServiceError::BadRequest(format!("unexpected field {other:?}"))),
        }
    }
    let image = image.ok_or_else(|| ServiceError::BadRequest("missing \"image\" field".into()))?;
    let meta = meta.into_meta()?;
    let record = blocking(move || svc.authenticate(&image, meta)).await?;
    Ok(Json(record).into_response())
}

#[derive(Debug, Deserialize, Serialize)]
pub struct FeedbackRequest {
    pub request_id: String,
    pub expert_label: String,
    pub submitter: String,
}

async fn feedback(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<Response> {
    let req: FeedbackRequest = parse_json(&body)?;
    let rec = blocking(move || svc.record_feedback(&req.request_id, &req.expert_label, &req.submitter)).await?;
    Ok(Json(rec).into_response())
}

async fn export(State(svc): State<Arc<Service>>) -> ApiResult<Response> {
    let manifest = blocking(move || svc.export_manifest()).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], manifest.to_csv()).into_response())
}

async fn set_thresholds(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<Response> {
    let costs: CostMatrix = parse_json(&body)?;
    let band = blocking(move || svc.recalibrate(costs)).await?;
    Ok(Json(band).into_response())
}

async fn thresholds(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.snapshot().info()).into_response()
}

async fn metrics(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.metrics()).into_response()
}

async fn models(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.models()).into_response()
}

async fn activate(State(svc): State<Arc<Service>>, Path(version): Path<String>) -> ApiResult<Response> {
    let info = blocking(move || svc.activate(&version)).await?;
    Ok(Json(info).into_response())
}

#[derive(Debug, Deserialize)]
struct TradeoffQuery {
    /// Comma-separated rejection budgets.
    budgets: Option<String>,
}

async fn tradeoff(State(svc): State<Arc<Service>>, Query(q): Query<TradeoffQuery>) -> ApiResult<Response> {
    let budgets = match q.budgets.as_deref() {
        None | Some("") => DEFAULT_BUDGETS.to_vec(),
        Some(s) => s
            .split(',')
            .map(|b| {
                b.trim()
                    .parse::<f64>()
                    .map_err(|_| ServiceError::BadRequest(format!("not a number: {b:?}")))
            })
            .collect::<ApiResult<Vec<_>>>()?,
    };
    let curve = blocking(move || svc.tradeoff(&budgets)).await?;
    Ok(Json(curve).into_response())
}

/// Binds `service.config().bind` and serves until ctrl-c.
pub async fn serve(service: Arc<Service>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(service.config().bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
