//! Serves any [`Backend`] over the JSON wire protocol, so an engine can
//! reach it through [`arsentinel_core::backend::HttpBackend`].

use std::sync::Arc;

use arsentinel_core::backend::wire::{
    DetectRequest, DetectResponse, ImageRequest, KeyObjectsResponse, OcrResponse, SegmentRequest, SegmentResponse,
    VerdictRequest, WireMask,
};
use arsentinel_core::backend::{Backend, BackendError, SemanticVerdict};
use arsentinel_core::mask::rle_encode;
use arsentinel_core::model::ImageRef;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};

use crate::api::ErrorBody;

type Shared = Arc<dyn Backend>;

fn fail(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody::new(message))).into_response()
}

fn backend_error(e: BackendError) -> Response {
    let status = match e {
        BackendError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    fail(status, e.to_string())
}

fn decode(image: &arsentinel_core::backend::wire::WireImage, id: &str) -> Result<ImageRef, Box<Response>> {
    image.to_image_ref(id).map_err(|e| Box::new(fail(StatusCode::BAD_REQUEST, e)))
}

pub fn backend_router(backend: Shared) -> Router {
    Router::new()
        .route("/v1/keyobjects", post(keyobjects))
        .route("/v1/detect", post(detect))
        .route("/v1/segment", post(segment))
        .route("/v1/ocr", post(ocr))
        .route("/v1/verdict", post(verdict))
        .layer(DefaultBodyLimit::max(64 * 1024 * 1024))
        .with_state(backend)
}

async fn keyobjects(State(b): State<Shared>, Json(req): Json<ImageRequest>) -> Response {
    let image = match decode(&req.image, "wire") {
        Ok(i) => i,
        Err(r) => return *r,
    };
    match b.identify_key_objects(&image).await {
        Ok(objects) => Json(KeyObjectsResponse { objects }).into_response(),
        Err(e) => backend_error(e),
    }
}

async fn detect(State(b): State<Shared>, Json(req): Json<DetectRequest>) -> Response {
    let image = match decode(&req.image, "wire") {
        Ok(i) => i,
        Err(r) => return *r,
    };
    match b.detect(&image, &req.query).await {
        Ok(boxes) => Json(DetectResponse { boxes }).into_response(),
        Err(e) => backend_error(e),
    }
}

async fn segment(State(b): State<Shared>, Json(req): Json<SegmentRequest>) -> Response {
    let image = match decode(&req.image, "wire") {
        Ok(i) => i,
        Err(r) => return *r,
    };
    match b.segment(&image, &req.boxes).await {
        Ok(masks) => Json(SegmentResponse {
            masks: masks.iter().map(|m| WireMask { rle: rle_encode(m) }).collect(),
        })
        .into_response(),
        Err(e) => backend_error(e),
    }
}

async fn ocr(State(b): State<Shared>, Json(req): Json<ImageRequest>) -> Response {
    let image = match decode(&req.image, "wire") {
        Ok(i) => i,
        Err(r) => return *r,
    };
    match b.ocr(&image).await {
        Ok(tokens) => Json(OcrResponse { tokens }).into_response(),
        Err(e) => backend_error(e),
    }
}

async fn verdict(State(b): State<Shared>, Json(req): Json<VerdictRequest>) -> Response {
    let mut images = Vec::with_capacity(req.images.len());
    for (i, w) in req.images.iter().enumerate() {
        match decode(w, &format!("wire/{i}")) {
            Ok(img) => images.push(img),
            Err(r) => return *r,
        }
    }
    match b.semantic_verdict(&req.prompt, &images).await {
        Ok(v) => Json::<SemanticVerdict>(v).into_response(),
        Err(e) => backend_error(e),
    }
}
