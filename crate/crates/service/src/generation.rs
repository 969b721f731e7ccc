use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use seasynth_core::generation::wire::{self, WireError, WireErrorBody, WireRequest};
use seasynth_core::generation::GenerationBackend;
use seasynth_core::Error;

/// `POST /generate` backed by `backend`.
pub fn generation_router(backend: Arc<dyn GenerationBackend>) -> Router {
    Router::new()
        .route("/generate", post(generate))
        .with_state(backend)
}

async fn generate(
    State(backend): State<Arc<dyn GenerationBackend>>,
    Json(req): Json<WireRequest>,
) -> Response {
    let request_id = req.request_id.clone();
    let result = tokio::task::spawn_blocking(move || wire::handle(backend.as_ref(), req)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => {
            let status = match e {
                Error::Validation(_) | Error::UnreadableImage { .. } => StatusCode::UNPROCESSABLE_ENTITY,
                Error::GenerationFailed { .. } => StatusCode::BAD_GATEWAY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            };
            let message = match e {
                Error::GenerationFailed { message, .. } => message,
                other => other.to_string(),
            };
            (status, Json(WireError { error: WireErrorBody { request_id, message } })).into_response()
        }
        Err(join) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(WireError {
                error: WireErrorBody {
                    request_id,
                    message: join.to_string(),
                },
            }),
        )
            .into_response(),
    }
}
