//! HTTP surface: `POST /v1/detect`, `GET /v1/health`, `GET /v1/metrics`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::config::{ConfigError, ServiceConfig};
use crate::engine::{DetectRequest, Engine, RequestError, ServiceError};

/// Rough upper bound on request bytes per token, used to size the body
/// limit from the token limit.
const BYTES_PER_TOKEN: usize = 16;

fn error_response(request_id: Option<&str>, error: &ServiceError) -> Response {
    let status = StatusCode::from_u16(error.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    if status.is_server_error() {
        tracing::warn!(request_id, %error, "request failed");
    }
    let mut body = json!({ "error": error.to_string() });
    if let Some(id) = request_id {
        body["request_id"] = id.into();
    }
    (status, Json(body)).into_response()
}

async fn detect(State(engine): State<Arc<Engine>>, body: Bytes) -> Response {
    let request: DetectRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            engine.metrics().record_response(400);
            return error_response(None, &ServiceError::BadRequest(format!("malformed request: {e}")));
        }
    };
    match engine.detect(request).await {
        Ok(resp) => Json(resp).into_response(),
        Err(RequestError { request_id, error }) => error_response(Some(&request_id), &error),
    }
}

async fn health(State(engine): State<Arc<Engine>>) -> Response {
    let scorer = engine.scorer();
    Json(json!({
        "status": "ok",
        "max_sequence_length": scorer.max_sequence_length(),
        "reserved_special_tokens": scorer.reserved_special_tokens(),
    }))
    .into_response()
}

async fn metrics(State(engine): State<Arc<Engine>>) -> Response {
    (
        [(header::CONTENT_TYPE, "text/plain; version=0.0.4")],
        engine.metrics().render(),
    )
        .into_response()
}

pub fn router(engine: Arc<Engine>) -> Router {
    let body_limit = engine
        .config()
        .max_request_tokens
        .saturating_mul(BYTES_PER_TOKEN)
        .max(1 << 20);
    Router::new()
        .route("/v1/detect", post(detect))
        .route("/v1/health", get(health))
        .route("/v1/metrics", get(metrics))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(engine)
}

/// Binds `addr` and serves in the background. Returns the bound address,
/// which differs from `addr` when port 0 was requested.
pub async fn start(engine: Arc<Engine>, addr: &str) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    let app = router(engine);
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!(error = %e, "server stopped");
        }
    });
    Ok((bound, handle))
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("binding {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Builds the scorer, binds `config.bind` and serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), ServeError> {
    let scorer = config.build_scorer()?;
    let addr = config.bind.clone();
    let engine = Arc::new(Engine::new(config, scorer));
    let listener = TcpListener::bind(&addr)
        .await
        .map_err(|source| ServeError::Bind { addr: addr.clone(), source })?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await?;
    Ok(())
}
