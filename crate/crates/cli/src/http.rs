//! HTTP+JSON transport over [`Service`].
//!
//! | method | path                       | body                  |
//! |--------|----------------------------|-----------------------|
//! | POST   | `/claims`                  | `SubmissionRequest`   |
//! | GET    | `/claims/{id}`             |                       |
//! | POST   | `/claims/{id}/check`       | `CheckRequest` (opt.) |
//! | GET    | `/review/queue?page&page_size` |                   |
//! | POST   | `/claims/{id}/adjudicate`  | `AdjudicateRequest`   |
//! | GET    | `/healthz`                 |                       |
//!
//! Every error is `{code, message, details}` with a matching status.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use claimguard_core::service::{
    AdjudicateRequest, CheckRequest, ErrorDetails, ErrorKind, Service, ServiceError,
    SubmissionRequest, DEFAULT_PAGE_SIZE,
};

/// Transport-level wrapper so service errors render as JSON responses.
pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(self.0.body())).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

type Body = Result<Bytes, BytesRejection>;

fn body_bytes(body: Body) -> Result<Bytes, ServiceError> {
    body.map_err(|r| {
        let kind = if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ErrorKind::PayloadTooLarge
        } else {
            ErrorKind::Validation
        };
        ServiceError {
            kind,
            code: if kind == ErrorKind::PayloadTooLarge {
                "payload_too_large"
            } else {
                "validation_failed"
            },
            message: r.body_text(),
            details: ErrorDetails {
                field: Some("body".into()),
                stage: None,
            },
        }
    })
}

fn parse_body<T: DeserializeOwned>(body: Body) -> Result<T, ServiceError> {
    serde_json::from_slice(&body_bytes(body)?)
        .map_err(|e| ServiceError::validation("body", format!("invalid JSON body: {e}")))
}

/// Runs blocking service work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::internal("worker", e.to_string()))?
        .map_err(ApiError)
}

async fn submit(State(svc): State<Arc<Service>>, body: Body) -> ApiResult<Response> {
    let req: SubmissionRequest = parse_body(body)?;
    let resp = blocking(move || svc.handle_submit(req)).await?;
    Ok((StatusCode::CREATED, Json(resp)).into_response())
}

async fn get_claim(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.get_claim(&id)?).into_response())
}

async fn check(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    body: Body,
) -> ApiResult<Response> {
    let bytes = body_bytes(body)?;
    let overrides: CheckRequest = if bytes.iter().all(u8::is_ascii_whitespace) {
        CheckRequest::default()
    } else {
        parse_body(Ok(bytes))?
    };
    let a = blocking(move || svc.handle_check(&id, &overrides)).await?;
    Ok(Json(a).into_response())
}

#[derive(Debug, Deserialize)]
struct QueueParams {
    #[serde(default)]
    page: usize,
    #[serde(default = "default_page_size")]
    page_size: usize,
}

fn default_page_size() -> usize {
    DEFAULT_PAGE_SIZE
}

async fn queue(
    State(svc): State<Arc<Service>>,
    params: Result<Query<QueueParams>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(p) = params.map_err(|e| ServiceError::validation("query", e.body_text()))?;
    let q = blocking(move || svc.handle_review_queue(p.page, p.page_size)).await?;
    Ok(Json(q).into_response())
}

async fn adjudicate(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    body: Body,
) -> ApiResult<Response> {
    let req: AdjudicateRequest = parse_body(body)?;
    let rec = blocking(move || svc.handle_adjudicate(&id, req)).await?;
    Ok(Json(rec).into_response())
}

async fn healthz(State(svc): State<Arc<Service>>) -> Json<claimguard_core::service::Health> {
    Json(svc.health())
}

async fn fallback() -> ApiError {
    ApiError(ServiceError {
        kind: ErrorKind::NotFound,
        code: "not_found",
        message: "no such route".into(),
        details: Default::default(),
    })
}

pub fn router(service: Arc<Service>) -> Router {
    // Room for a handful of base64-inflated images per submission.
    let body_limit = service.config().max_image_bytes.saturating_mul(16);
    Router::new()
        .route("/claims", post(submit))
        .route("/claims/{id}", get(get_claim))
        .route("/claims/{id}/check", post(check))
        .route("/claims/{id}/adjudicate", post(adjudicate))
        .route("/review/queue", get(queue))
        .route("/healthz", get(healthz))
        .fallback(fallback)
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(service)
}

/// Serves until Ctrl-C.
pub async fn serve(service: Arc<Service>, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
