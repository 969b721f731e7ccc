use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use seasynth_core::manifest::load_manifest;
use seasynth_core::pipeline::{stored_image_path, MANIFEST_FILE};
use seasynth_core::review::{CreateSession, ItemView, NextItem, ReviewStore, VerdictSubmission};
use seasynth_core::{Error, SourceImage};

/// Shared state of the review service.
pub struct ReviewState {
    store: Mutex<ReviewStore>,
    output_root: PathBuf,
    sources: HashMap<String, SourceImage>,
}

impl ReviewState {
    /// Loads `output_root/manifest.jsonl` and opens the review ledgers in
    /// `review_dir`. `sources` are optional; without them the service has no
    /// source images or boxes to offer.
    pub fn open(output_root: &Path, review_dir: &Path, sources: Vec<SourceImage>) -> seasynth_core::Result<Self> {
        let manifest = load_manifest(&output_root.join(MANIFEST_FILE))?;
        if manifest.skipped_lines > 0 {
            tracing::warn!(skipped = manifest.skipped_lines, "manifest has unreadable lines");
        }
        Ok(Self {
            store: Mutex::new(ReviewStore::open(review_dir, manifest.records)?),
            output_root: output_root.to_path_buf(),
            sources: sources.into_iter().map(|s| (s.id.clone(), s)).collect(),
        })
    }

    fn store(&self) -> MutexGuard<'_, ReviewStore> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug, Default, Deserialize, Serialize)]
pub struct StatsQuery {
    /// Comma-separated session ids; all sessions when absent.
    #[serde(default)]
    pub sessions: Option<String>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
pub struct ImageQuery {
    /// `edited` (default) or `source`.
    #[serde(default)]
    pub variant: Option<String>,
}

pub fn review_router(state: Arc<ReviewState>) -> Router {
    Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}/next", get(next_item))
        .route("/api/session/{id}/verdict", post(submit_verdict))
        .route("/api/session/{id}/stats", get(session_stats))
        .route("/api/stats", get(good_image_rate))
        .route("/api/image/{edited_id}", get(image))
        .with_state(state)
}

struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::UnknownSession(_) | Error::UnknownItem { .. } | Error::UnknownImageId(_) | Error::MissingImage(_) => {
                StatusCode::NOT_FOUND
            }
            Error::DuplicateVerdict { .. } | Error::DuplicateSession(_) => StatusCode::CONFLICT,
            Error::NoSessions | Error::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = serde_json::json!({
            "error": { "kind": self.0.kind(), "message": self.0.to_string() }
        });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn create_session(
    State(state): State<Arc<ReviewState>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<seasynth_core::review::Session>), ApiError> {
    let session = state.store().create_session(req)?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn next_item(State(state): State<Arc<ReviewState>>, UrlPath(id): UrlPath<String>) -> ApiResult<ItemView> {
    let next = state.store().next_item(&id)?;
    let mut view = ItemView {
        next,
        image_url: None,
        source_url: None,
        source_boxes: Vec::new(),
    };
    if let NextItem::Item { item, .. } = &view.next {
        view.image_url = Some(format!("/api/image/{}", item.edited_id));
        if let Some(src) = state.sources.get(&item.source_id) {
            view.source_url = Some(format!("/api/image/{}?variant=source", item.edited_id));
            view.source_boxes = src.boat_boxes().map(|(_, b)| b.clone()).collect();
        }
    }
    Ok(Json(view))
}

async fn submit_verdict(
    State(state): State<Arc<ReviewState>>,
    UrlPath(id): UrlPath<String>,
    Json(sub): Json<VerdictSubmission>,
) -> Result<(StatusCode, Json<seasynth_core::review::ReviewVerdict>), ApiError> {
    let verdict = state.store().submit_verdict(&id, sub)?;
    Ok((StatusCode::CREATED, Json(verdict)))
}

async fn session_stats(
    State(state): State<Arc<ReviewState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<seasynth_core::review::SessionStats> {
    Ok(Json(state.store().session_stats(&id)?))
}

async fn good_image_rate(
    State(state): State<Arc<ReviewState>>,
    Query(q): Query<StatsQuery>,
) -> ApiResult<seasynth_core::review::GoodImageRate> {
    let ids: Vec<String> = q
        .sessions
        .as_deref()
        .unwrap_or("")
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    Ok(Json(state.store().good_image_rate(&ids)?))
}

async fn image(
    State(state): State<Arc<ReviewState>>,
    UrlPath(edited_id): UrlPath<String>,
    Query(q): Query<ImageQuery>,
) -> Result<Response, ApiError> {
    let path = {
        let store = state.store();
        let rec = store
            .record(&edited_id)
            .ok_or_else(|| Error::UnknownImageId(edited_id.clone()))?;
        match q.variant.as_deref().unwrap_or("edited") {
            "edited" => stored_image_path(&state.output_root, rec),
            "source" => state.sources.get(&rec.source_id).map(|s| s.path.clone()),
            other => return Err(Error::Validation(format!("unknown image variant {other}")).into()),
        }
        .ok_or_else(|| Error::MissingImage(PathBuf::from(&edited_id)))?
    };
    let bytes = tokio::fs::read(&path).await.map_err(|e| Error::io(&path, e))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "image/png",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}
