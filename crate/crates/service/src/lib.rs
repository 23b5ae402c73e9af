//! HTTP front end for interactive per-illuminant editing.
//!
//! A client uploads an image, receives the slot decomposition, fetches weight
//! maps, and asks for recomposed previews under chromaticity edits. The model
//! is shared read-only; each session owns its decomposition.

pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use aid_core::imaging::{
    compose_illumination, encode_png, relight, to_preview, weight_preview, ChromaticityRB, RawImage,
    DEFAULT_PREVIEW_GAMMA, DEFAULT_WB_CEILING,
};
use aid_core::metrics::{count_illuminants, ACTIVE_THRESHOLD};
use aid_core::model::{AidModel, ModelConfig};
use aid_core::AidError;
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use image::DynamicImage;
use serde::{Deserialize, Serialize};
use session::{RecomposeRequest, Session, SessionStore, DEFAULT_SESSION_CAP};

pub use session::SlotEdit;

/// Largest accepted upload in pixels.
pub const DEFAULT_MAX_PIXELS: usize = 256 * 256;
pub const DEFAULT_MAX_BODY_BYTES: usize = 8 * 1024 * 1024;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub session_cap: usize,
    pub max_pixels: usize,
    pub max_body_bytes: usize,
    /// Editor assets served under `/` when set.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            session_cap: DEFAULT_SESSION_CAP,
            max_pixels: DEFAULT_MAX_PIXELS,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            static_dir: None,
        }
    }
}

pub struct AppState {
    model: Option<Arc<AidModel>>,
    sessions: Mutex<SessionStore>,
    config: ServiceConfig,
}

impl AppState {
    pub fn new(model: Option<AidModel>, config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            model: model.map(Arc::new),
            sessions: Mutex::new(SessionStore::new(config.session_cap)),
            config,
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session lock").len()
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .lock()
            .expect("session lock")
            .get(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session '{id}'")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn internal(e: AidError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SlotInfo {
    pub index: usize,
    pub r: f64,
    pub b: f64,
    pub max_weight: f64,
    pub active: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DecomposeResponse {
    pub session_id: String,
    pub slots: Vec<SlotInfo>,
    pub image_size: ImageSize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct HealthResponse {
    pub status: String,
    pub model_config: Option<ModelConfig>,
}

#[derive(Debug, Deserialize)]
pub struct UploadParams {
    /// Display gamma undone on upload.
    pub gamma: Option<f64>,
}

pub fn router(state: Arc<AppState>) -> Router {
    let body_limit = state.config.max_body_bytes;
    let static_dir = state.config.static_dir.clone();
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/decompose", post(decompose))
        .route("/api/session/{id}/weightmap/{k}", get(weightmap))
        .route("/api/session/{id}/recompose", post(recompose))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: if state.model.is_some() { "ok" } else { "no-model" }.into(),
        model_config: state.model.as_ref().map(|m| m.config.clone()),
    })
}

fn png_response(img: DynamicImage) -> Result<Response, ApiError> {
    let bytes = encode_png(&img).map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

fn decode_upload(bytes: &[u8], gamma: f64, max_pixels: usize, multiple: usize) -> Result<RawImage, ApiError> {
    let bad = |msg: String| ApiError::new(StatusCode::BAD_REQUEST, msg);
    let reader = image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| bad(format!("cannot read upload: {e}")))?;
    let (w, h) = reader
        .into_dimensions()
        .map_err(|e| bad(format!("cannot decode image: {e}")))?;
    if (w as usize) * (h as usize) > max_pixels {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("image is {w}x{h}; at most {max_pixels} pixels are accepted"),
        ));
    }
    let img = RawImage::decode_png(bytes, gamma).map_err(|e| bad(e.to_string()))?;
    let (ch, cw) = (img.height() / multiple * multiple, img.width() / multiple * multiple);
    if ch == 0 || cw == 0 {
        return Err(bad(format!("image {w}x{h} is smaller than the model's {multiple}-pixel grid")));
    }
    if (ch, cw) == (img.height(), img.width()) {
        Ok(img)
    } else {
        img.crop(ch, cw).map_err(|e| bad(e.to_string()))
    }
}

async fn decompose(
    State(state): State<Arc<AppState>>,
    Query(params): Query<UploadParams>,
    body: Bytes,
) -> Result<Json<DecomposeResponse>, ApiError> {
    let model = state
        .model
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded"))?;
    let gamma = params.gamma.unwrap_or(DEFAULT_PREVIEW_GAMMA);
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("gamma must be positive, got {gamma}")));
    }
    let max_pixels = state.config.max_pixels;
    let multiple = model.config.size_multiple();
    let (image, decomposition) = tokio::task::spawn_blocking(move || {
        let image = decode_upload(&body, gamma, max_pixels, multiple)?;
        let d = model.decompose(&image, 0).map_err(ApiError::internal)?;
        Ok::<_, ApiError>((image, d))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;

    let (_, mask) = count_illuminants(&decomposition.weights, ACTIVE_THRESHOLD);
    let slots = decomposition
        .chromas
        .iter()
        .enumerate()
        .map(|(k, c)| SlotInfo {
            index: k,
            r: c.r,
            b: c.b,
            max_weight: decomposition.weights.max_weight(k),
            active: mask[k],
        })
        .collect();
    let image_size = ImageSize {
        width: image.width(),
        height: image.height(),
    };
    let id = uuid::Uuid::new_v4().to_string();
    state.sessions.lock().expect("session lock").insert(Session {
        id: id.clone(),
        image,
        decomposition,
        created_at: SystemTime::now(),
        last_edit: Mutex::new(None),
    });
    Ok(Json(DecomposeResponse {
        session_id: id,
        slots,
        image_size,
    }))
}

async fn weightmap(
    State(state): State<Arc<AppState>>,
    Path((id, k)): Path<(String, usize)>,
) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let weights = &session.decomposition.weights;
    if k >= weights.count() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("slot {k} does not exist (K = {})", weights.count()),
        ));
    }
    let img = weight_preview(weights, k).map_err(ApiError::internal)?;
    png_response(DynamicImage::ImageLuma8(img))
}

/// Preview of the session image relit from its fused map to the edited one.
pub fn render_recompose(session: &Session, req: &RecomposeRequest) -> Result<Vec<u8>, ApiError> {
    let d = &session.decomposition;
    let k = d.chromas.len();
    let unprocessable = |msg: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, msg);
    let mut chromas = d.chromas.clone();
    for e in &req.edits {
        if e.slot >= k {
            return Err(unprocessable(format!("edit targets slot {} but K = {k}", e.slot)));
        }
        chromas[e.slot] = ChromaticityRB::new(e.r, e.b)
            .map_err(|_| unprocessable(format!("slot {}: chromaticity ({}, {}) must be positive", e.slot, e.r, e.b)))?;
    }
    for &s in &req.wb_slots {
        if s >= k {
            return Err(unprocessable(format!("white-balance slot {s} but K = {k}")));
        }
        chromas[s] = ChromaticityRB::NEUTRAL;
    }
    let gamma = req.gamma.unwrap_or(DEFAULT_PREVIEW_GAMMA);
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(unprocessable(format!("gamma must be positive, got {gamma}")));
    }
    let target = compose_illumination(&chromas, &d.weights).map_err(ApiError::internal)?;
    let out = relight(&session.image, &d.fused, &target, DEFAULT_WB_CEILING).map_err(ApiError::internal)?;
    let preview = to_preview(&out, gamma).map_err(ApiError::internal)?;
    encode_png(&DynamicImage::ImageRgb8(preview)).map_err(ApiError::internal)
}

async fn recompose(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<RecomposeRequest>,
) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let bytes = tokio::task::spawn_blocking({
        let session = session.clone();
        let req = req.clone();
        move || render_recompose(&session, &req)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    *session.last_edit.lock().expect("edit lock") = Some(req);
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}
