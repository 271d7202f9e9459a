//! HTTP/JSON inference service.
//!
//! Images travel as base64 PNG strings. One checkpoint is active at a time and
//! can be swapped through `/v1/admin/load`; requests already running keep the
//! model they started with.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::dataset::{AttributeVector, ATTRIBUTE_DIM, ATTRIBUTE_NAMES};
use crate::error::Error;
use crate::inference::{self, InferenceModel};
use crate::trainer;

/// Largest decoded payload accepted per image field.
pub const MAX_PAYLOAD_BYTES: usize = 8 * 1024 * 1024;
/// Request body ceiling: three base64 payloads plus JSON overhead.
const MAX_BODY_BYTES: usize = 3 * (MAX_PAYLOAD_BYTES * 4 / 3 + 4) + 64 * 1024;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub checkpoint: Option<PathBuf>,
    /// Most images one request may ask for.
    pub max_batch: usize,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            checkpoint: None,
            max_batch: 16,
            static_dir: None,
        }
    }
}

pub struct AppState {
    model: RwLock<Option<Arc<InferenceModel>>>,
    max_batch: usize,
}

impl AppState {
    pub fn new(model: Option<InferenceModel>, max_batch: usize) -> Arc<Self> {
        Arc::new(Self {
            model: RwLock::new(model.map(Arc::new)),
            max_batch: max_batch.max(1),
        })
    }

    pub fn current(&self) -> Option<Arc<InferenceModel>> {
        self.model.read().expect("model lock poisoned").clone()
    }

    pub fn replace(&self, model: InferenceModel) {
        *self.model.write().expect("model lock poisoned") = Some(Arc::new(model));
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidArgument(_) | Error::Config(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::ShapeMismatch(_) | Error::ChannelCount { .. } | Error::Image(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Reference,
    Explicit,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRequest {
    pub index: usize,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub image: String,
    pub mask: String,
    pub mode: Mode,
    #[serde(default)]
    pub reference_image: Option<String>,
    #[serde(default)]
    pub attributes: Option<Vec<f64>>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub sweep: Option<SweepRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub images: Vec<String>,
    pub attributes_used: Vec<[f64; ATTRIBUTE_DIM]>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractRequest {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractResponse {
    pub attributes: [f64; ATTRIBUTE_DIM],
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub checkpoint_id: Option<String>,
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRequest {
    pub path: PathBuf,
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/v1/complete", post(complete))
        .route("/v1/extract", post(extract))
        .route("/v1/health", get(health))
        .route("/v1/admin/load", post(admin_load))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(config: ServeConfig) -> crate::Result<()> {
    let model = match &config.checkpoint {
        Some(path) => Some(InferenceModel::load(path)?),
        None => None,
    };
    if let Some(m) = &model {
        tracing::info!(checkpoint_id = m.checkpoint_id(), "checkpoint loaded");
    }
    let app = router(AppState::new(model, config.max_batch), config.static_dir.clone());
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app).await?;
    Ok(())
}

fn payload(field: &str, encoded: &str) -> Result<Vec<u8>, ApiError> {
    if encoded.len() / 4 * 3 > MAX_PAYLOAD_BYTES + 3 {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("`{field}` exceeds {MAX_PAYLOAD_BYTES} bytes"),
        ));
    }
    let bytes = inference::from_base64(encoded).map_err(|e| ApiError::bad_request(format!("`{field}`: {e}")))?;
    if bytes.len() > MAX_PAYLOAD_BYTES {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("`{field}` exceeds {MAX_PAYLOAD_BYTES} bytes"),
        ));
    }
    Ok(bytes)
}

fn decode_image_field(field: &str, encoded: &str, resolution: usize) -> Result<candle_core::Tensor, ApiError> {
    let t = inference::decode_image(&payload(field, encoded)?)
        .map_err(|e| ApiError::bad_request(format!("`{field}` is not a decodable image: {e}")))?;
    let (h, w) = (t.dims()[2], t.dims()[3]);
    if (h, w) != (resolution, resolution) {
        return Err(ApiError::bad_request(format!(
            "`{field}` is {w}×{h}; the loaded checkpoint needs {resolution}×{resolution}"
        )));
    }
    Ok(t)
}

fn loaded(state: &AppState) -> Result<Arc<InferenceModel>, ApiError> {
    state
        .current()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no checkpoint loaded"))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("inference task failed: {e}")))?
}

async fn complete(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CompletionRequest>,
) -> ApiResult<CompletionResponse> {
    let model = loaded(&state)?;
    let max_batch = state.max_batch;
    let started = Instant::now();
    let mode = req.mode;
    let seed = req.seed.unwrap_or_else(|| u64::from(rand::random::<u32>()));
    let resp = blocking(move || run_completion(&model, &req, seed, max_batch)).await?;
    tracing::info!(
        ?mode,
        seed,
        images = resp.images.len(),
        elapsed_ms = started.elapsed().as_millis() as u64,
        "complete"
    );
    Ok(Json(resp))
}

fn run_completion(
    model: &InferenceModel,
    req: &CompletionRequest,
    seed: u64,
    max_batch: usize,
) -> Result<CompletionResponse, ApiError> {
    let r = model.resolution();
    let image = decode_image_field("image", &req.image, r)?;
    let mask_bytes = payload("mask", &req.mask)?;
    let mask = inference::decode_mask(&mask_bytes)
        .map_err(|e| ApiError::bad_request(format!("`mask` is not a decodable image: {e}")))?;
    if (mask.height(), mask.width()) != (r, r) {
        return Err(ApiError::bad_request(format!(
            "mask is {}×{} but the image is {r}×{r}",
            mask.width(),
            mask.height()
        )));
    }
    let mask = mask.to_tensor()?;

    let k = req.k.unwrap_or(1);
    if k == 0 || k > max_batch {
        return Err(ApiError::unprocessable(format!("k must be in 1..={max_batch}")));
    }
    let base: Vec<AttributeVector> = match req.mode {
        Mode::Reference => {
            let encoded = req
                .reference_image
                .as_deref()
                .ok_or_else(|| ApiError::unprocessable("mode `reference` needs `reference_image`"))?;
            let reference = decode_image_field("reference_image", encoded, r)?;
            vec![model.extract(&reference)?]
        }
        Mode::Explicit => {
            let values = req
                .attributes
                .as_deref()
                .ok_or_else(|| ApiError::unprocessable("mode `explicit` needs `attributes`"))?;
            let v = AttributeVector::from_slice(values).map_err(|e| ApiError::unprocessable(e.to_string()))?;
            if v.values().iter().any(|x| !x.is_finite()) {
                return Err(ApiError::unprocessable("attributes must be finite"));
            }
            vec![v]
        }
        Mode::Random => trainer::draw_attributes(k, seed, trainer::AttributeSampling::Bernoulli),
    };

    let results = match &req.sweep {
        Some(s) => {
            if s.steps == 0 || s.steps > max_batch {
                return Err(ApiError::unprocessable(format!(
                    "sweep steps must be in 1..={max_batch}"
                )));
            }
            if s.index >= ATTRIBUTE_DIM {
                return Err(ApiError::unprocessable(format!(
                    "sweep index {} out of range 0..{ATTRIBUTE_DIM}",
                    s.index
                )));
            }
            let values = trainer::sweep_values(s.from, s.to, s.steps)?;
            model.sweep(&image, &mask, &base[0], s.index, &values)?
        }
        None => {
            let images = model.complete(&image, &mask, &base)?;
            images.into_iter().zip(base).collect()
        }
    };
    let mut images = Vec::with_capacity(results.len());
    let mut attributes_used = Vec::with_capacity(results.len());
    for (img, attrs) in results {
        images.push(inference::to_base64(&inference::encode_png(&img)?));
        attributes_used.push(*attrs.values());
    }
    Ok(CompletionResponse {
        images,
        attributes_used,
        seed,
    })
}

async fn extract(State(state): State<Arc<AppState>>, Json(req): Json<ExtractRequest>) -> ApiResult<ExtractResponse> {
    let model = loaded(&state)?;
    let resp = blocking(move || {
        let image = decode_image_field("image", &req.image, model.resolution())?;
        Ok(ExtractResponse {
            attributes: *model.extract(&image)?.values(),
            names: ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect(),
        })
    })
    .await?;
    Ok(Json(resp))
}

fn health_of(state: &AppState) -> HealthResponse {
    match state.current() {
        Some(m) => HealthResponse {
            status: "ok".into(),
            checkpoint_id: Some(m.checkpoint_id().to_string()),
            resolution: Some(m.resolution()),
        },
        None => HealthResponse {
            status: "no_checkpoint".into(),
            checkpoint_id: None,
            resolution: None,
        },
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(health_of(&state))
}

async fn admin_load(State(state): State<Arc<AppState>>, Json(req): Json<LoadRequest>) -> ApiResult<HealthResponse> {
    let path = req.path.clone();
    let model = blocking(move || {
        InferenceModel::load(&path).map_err(|e| ApiError::bad_request(format!("cannot load {}: {e}", path.display())))
    })
    .await?;
    tracing::info!(checkpoint_id = model.checkpoint_id(), path = %req.path.display(), "checkpoint swapped");
    state.replace(model);
    Ok(Json(health_of(&state)))
}
