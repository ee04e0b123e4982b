//! HTTP API over an [`AnnotationStore`].
//!
//! | method | path                  | success                          |
//! |--------|-----------------------|----------------------------------|
//! | GET    | `/hits/next?worker=W` | 200 HIT (quiz answers hidden)    |
//! | GET    | `/hits/{id}`          | 200 HIT (quiz answers hidden)    |
//! | POST   | `/annotations`        | 201 `{record, quiz}`             |
//! | GET    | `/progress`           | 200 per-HIT and per-worker state |
//! | GET    | `/labels`             | 200 taxonomy and custom labels   |
//! | GET    | `/ui/...`             | static front-end bundle          |
//!
//! Errors are `{"error": message, "field": name?}` with 400 for malformed
//! bodies, 404 for unknown HITs or items (or no HIT left), 403 when the
//! worker does not hold the HIT, 409 for a repeated answer and 422 for
//! invalid field values.
//!
//! POST body: `{"worker_id", "hit_id", "item_id", "choice": {"label": L} |
//! {"custom": T}, "chose_from_top3"?: bool}`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use super::aggregate::{AnnotationRecord, Choice};
use super::store::{AnnotationStore, StoreError};

pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<&'static str>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), field: None }
    }

    fn field(status: StatusCode, field: &'static str, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), field: Some(field) }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UnknownHit(_) | StoreError::UnknownItem { .. } => StatusCode::NOT_FOUND,
            StoreError::NotAssigned { .. } => StatusCode::FORBIDDEN,
            StoreError::Duplicate { .. } => StatusCode::CONFLICT,
            StoreError::Validation { field, .. } => return ApiError::field(StatusCode::UNPROCESSABLE_ENTITY, field, e.to_string()),
            StoreError::Corrupt { .. } | StoreError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

type Shared = Arc<AnnotationStore>;

pub fn router(store: Shared, static_dir: Option<PathBuf>) -> Router {
    let mut r = Router::new()
        .route("/hits/next", get(next_hit))
        .route("/hits/{id}", get(get_hit))
        .route("/annotations", post(post_annotation))
        .route("/progress", get(progress))
        .route("/labels", get(labels));
    if let Some(dir) = static_dir {
        r = r.nest_service("/ui", tower_http::services::ServeDir::new(dir));
    }
    r.with_state(store)
}

/// Serves until the process receives Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, store: Shared, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    axum::serve(listener, router(store, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Deserialize)]
struct NextQuery {
    worker: Option<String>,
}

async fn next_hit(State(store): State<Shared>, Query(q): Query<NextQuery>) -> Result<Json<Value>, ApiError> {
    let worker = q
        .worker
        .filter(|w| !w.trim().is_empty())
        .ok_or_else(|| ApiError::field(StatusCode::BAD_REQUEST, "worker", "query parameter worker is required"))?;
    let s = store.clone();
    let hit = tokio::task::spawn_blocking(move || s.claim_next(&worker).map(|h| h.map(|h| h.public_view())))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    match hit {
        Some(h) => Ok(Json(serde_json::to_value(h).unwrap())),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "no open HIT for this worker")),
    }
}

async fn get_hit(State(store): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let hit = store.hit(&id).ok_or_else(|| ApiError::from(StoreError::UnknownHit(id.clone())))?;
    Ok(Json(serde_json::to_value(hit.public_view()).unwrap()))
}

fn parse_record(body: &[u8]) -> Result<AnnotationRecord, ApiError> {
    let v: Value = serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("body is not JSON: {e}")))?;
    let obj = v.as_object().ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "body must be a JSON object"))?;
    let text = |field: &'static str| -> Result<String, ApiError> {
        match obj.get(field) {
            Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
            Some(_) => Err(ApiError::field(StatusCode::UNPROCESSABLE_ENTITY, field, format!("{field} must be a non-empty string"))),
            None => Err(ApiError::field(StatusCode::UNPROCESSABLE_ENTITY, field, format!("{field} is required"))),
        }
    };
    let worker_id = text("worker_id")?;
    let hit_id = text("hit_id")?;
    let item_id = text("item_id")?;
    let bad_choice = || ApiError::field(StatusCode::UNPROCESSABLE_ENTITY, "choice", "choice must be {\"label\": name} or {\"custom\": text}");
    let choice = match obj.get("choice").and_then(Value::as_object) {
        Some(c) if c.len() == 1 => match (c.get("label"), c.get("custom")) {
            (Some(Value::String(l)), None) => Choice::Label(l.clone()),
            (None, Some(Value::String(t))) => Choice::Custom(t.clone()),
            _ => return Err(bad_choice()),
        },
        _ => return Err(bad_choice()),
    };
    let chose_from_top3 = match obj.get("chose_from_top3") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(ApiError::field(StatusCode::UNPROCESSABLE_ENTITY, "chose_from_top3", "chose_from_top3 must be a boolean")),
    };
    Ok(AnnotationRecord { worker_id, hit_id, item_id, dialogue_id: None, turn_index: None, choice, chose_from_top3, timestamp_ms: 0 })
}

async fn post_annotation(State(store): State<Shared>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let record = parse_record(&body)?;
    let out = tokio::task::spawn_blocking(move || store.submit(record))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(serde_json::to_value(out).unwrap())))
}

async fn progress(State(store): State<Shared>) -> Json<Value> {
    Json(serde_json::to_value(store.progress()).unwrap())
}

async fn labels(State(store): State<Shared>) -> Json<Value> {
    Json(serde_json::to_value(store.labels()).unwrap())
}
