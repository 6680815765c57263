use std::sync::Arc;

use ambiprune_core::ambiguity::{histogram, summarize, DEFAULT_BINS};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::CorsLayer;

use crate::error::ApiError;
use crate::session::{Session, WhatIfRequest};

type AppState = Option<Arc<Session>>;

pub fn router(session: Option<Arc<Session>>, cors_origin: Option<&str>) -> Router {
    let app = Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/dataset/summary", get(summary))
        .route("/ambiguity/histogram", get(ambiguity_histogram))
        .route("/instances", get(instances))
        .route("/whatif", post(whatif))
        .route("/crops/{instance_id}", get(crop))
        .with_state(session);
    match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(origin) => app.layer(
            CorsLayer::new()
                .allow_origin(origin)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        ),
        None => app,
    }
}

pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}

fn loaded(state: &AppState) -> Result<&Arc<Session>, ApiError> {
    state
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no dataset loaded"))
}

async fn summary(State(state): State<AppState>) -> Result<Json<serde_json::Value>, ApiError> {
    let s = loaded(&state)?;
    let d = s.dataset();
    let stats = summarize(d);
    Ok(Json(json!({
        "name": d.name,
        "images": d.images.len(),
        "instances": stats.instances,
        "scored": stats.scored,
        "ambiguity": stats,
        "provenance": d.provenance,
    })))
}

#[derive(Deserialize)]
struct HistogramQuery {
    bins: Option<usize>,
}

async fn ambiguity_histogram(
    State(state): State<AppState>,
    Query(q): Query<HistogramQuery>,
) -> Result<Json<ambiprune_core::ambiguity::AmbiguityHistogram>, ApiError> {
    let s = loaded(&state)?;
    let bins = q.bins.unwrap_or(DEFAULT_BINS);
    if !(1..=200).contains(&bins) {
        return Err(ApiError::bad_request(format!("bins {bins} outside [1,200]")));
    }
    Ok(Json(histogram(s.dataset(), bins)?))
}

#[derive(Deserialize)]
struct InstancesQuery {
    min_amb: Option<f64>,
    max_amb: Option<f64>,
    page: Option<usize>,
    page_size: Option<usize>,
}

/// Percent-encodes everything outside the URL-safe path characters.
fn encode_segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~:".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

async fn instances(
    State(state): State<AppState>,
    Query(q): Query<InstancesQuery>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let s = loaded(&state)?;
    let min = q.min_amb.unwrap_or(0.0);
    let max = q.max_amb.unwrap_or(1.0);
    if !(0.0 <= min && min <= max && max <= 1.0) {
        return Err(ApiError::bad_request(format!(
            "need 0 <= min_amb <= max_amb <= 1, got [{min}, {max}]"
        )));
    }
    let page = q.page.unwrap_or(0);
    let page_size = q.page_size.unwrap_or(50);
    if !(1..=1000).contains(&page_size) {
        return Err(ApiError::bad_request(format!("page_size {page_size} outside [1,1000]")));
    }
    let matching = s.instances_in(min, max);
    let total = matching.len();
    let start = page.saturating_mul(page_size);
    if page > 0 && start >= total {
        return Err(ApiError::not_found(format!("page {page} beyond end ({total} instances)")));
    }
    let items: Vec<_> = matching
        .iter()
        .skip(start)
        .take(page_size)
        .map(|(image_id, inst)| {
            let crop_url = s
                .has_image(&inst.id)
                .then(|| format!("/crops/{}", encode_segment(&inst.id)));
            json!({
                "id": inst.id,
                "image_id": image_id,
                "ambiguity": inst.ambiguity,
                "bbox": inst.bbox,
                "identity": inst.identity,
                "occlusion": inst.occlusion,
                "truncation": inst.truncation,
                "ignore": inst.ignore,
                "crop_url": crop_url,
            })
        })
        .collect();
    Ok(Json(json!({
        "min_amb": min,
        "max_amb": max,
        "page": page,
        "page_size": page_size,
        "total": total,
        "items": items,
    })))
}

async fn whatif(
    State(state): State<AppState>,
    body: Result<Json<WhatIfRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let s = Arc::clone(loaded(&state)?);
    let Json(request) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let (json, hit) = tokio::task::spawn_blocking(move || s.whatif_json(&request))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((
        [
            (header::CONTENT_TYPE, "application/json"),
            (header::HeaderName::from_static("x-cache"), if hit { "hit" } else { "miss" }),
        ],
        json.as_str().to_owned(),
    )
        .into_response())
}

async fn crop(
    State(state): State<AppState>,
    Path(instance_id): Path<String>,
) -> Result<Response, ApiError> {
    let s = Arc::clone(loaded(&state)?);
    let png = tokio::task::spawn_blocking(move || s.crop_png(&instance_id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
