//! HTTP render and diagnostics service.
//!
//! `GET /config`, `POST /render`, `POST /baseline-render` and
//! `GET|POST /diagnostics/conditioning`.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use candle_core::DType;
use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;

use crate::codec::Codec;
use crate::conditioning::Frontend;
use crate::diffusion::SUPPORTED_STEPS;
use crate::frames::Frames;
use crate::grid::{render_procedural, DrumGrid, GridDocument, SegmentWindow, FAMILY_NAMES};
use crate::metrics::real_time_factor;
use crate::pca::PcaBasis;
use crate::pipeline::generate::{generate, request_window};
use crate::pipeline::train::{Checkpoint, ModelKind};
use crate::pipeline::wav::pcm16_bytes;
use crate::{Error, Result};

pub const DEFAULT_STEPS: usize = 25;

/// Immutable model state shared by all requests.
pub struct ServiceState {
    pub codec: Codec,
    pub basis: PcaBasis,
    /// Diffusion checkpoints keyed by step count and auxiliary-loss flag.
    pub checkpoints: BTreeMap<(usize, bool), Checkpoint>,
    pub frontend: Frontend,
}

impl ServiceState {
    pub fn new(codec: Codec, basis: PcaBasis, checkpoints: Vec<Checkpoint>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for c in checkpoints {
            if let ModelKind::Diffusion { steps, rvq_ce } = c.meta.kind {
                map.insert((steps, rvq_ce), c);
            }
        }
        let frontend = match map.values().next() {
            Some(c) => {
                let f = Frontend::new(c.frontend.config().clone(), DType::F32)?;
                f.params().load_map(&c.frontend.params().snapshot()?)?;
                f
            }
            None => return Err(Error::Missing("no diffusion checkpoint to serve".into())),
        };
        Ok(Self {
            codec,
            basis,
            checkpoints: map,
            frontend,
        })
    }

    pub fn steps(&self, rvq_ce: bool) -> Vec<usize> {
        self.checkpoints.keys().filter(|(_, ce)| *ce == rvq_ce).map(|(n, _)| *n).collect()
    }

    fn config_json(&self) -> serde_json::Value {
        let denoisers: BTreeMap<String, _> = self
            .checkpoints
            .values()
            .map(|c| (c.name(), c.meta.denoiser.clone()))
            .collect();
        json!({
            "sample_rate": self.codec.config().sample_rate,
            "frame_rate": self.codec.config().frame_rate(),
            "codec": self.codec.config(),
            "codec_hash": self.codec.content_hash(),
            "pca_components": self.basis.components(),
            "frontend": self.frontend.config(),
            "denoisers": denoisers,
            "steps": self.steps(false),
            "rvq_ce_steps": self.steps(true),
            "default_steps": DEFAULT_STEPS,
            "families": FAMILY_NAMES,
            "steps_per_beat": 4,
            "beats": 4,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    #[serde(flatten)]
    pub grid: GridDocument,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rvq_ce: bool,
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

#[derive(Debug, Deserialize)]
pub struct GridQuery {
    pub grid: String,
}

struct ApiError {
    status: StatusCode,
    field: Option<String>,
    message: String,
}

impl ApiError {
    fn bad(field: Option<String>, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            field,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation { field, message } => Self::bad(Some(field), message),
            Error::Shape(m) => Self::bad(None, m),
            other => Self {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                field: None,
                message: other.to_string(),
            },
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad(None, r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message, "field": self.field }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse_grid(doc: &GridDocument, state: &ServiceState) -> ApiResult<(DrumGrid, SegmentWindow)> {
    if !(doc.bpm.is_finite() && doc.bpm > 0.0) {
        return Err(ApiError::bad(Some("bpm".into()), "must be a positive number"));
    }
    let grid = doc.to_grid()?;
    let window = request_window(doc.bpm, &state.codec.layout())?;
    Ok((grid, window))
}

fn wav_response(audio: &[f32], sample_rate: u32, extra: &[(&'static str, String)]) -> ApiResult<Response> {
    let bytes = pcm16_bytes(audio, sample_rate)?;
    let mut resp = Response::new(Body::from(bytes));
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("audio/wav"));
    let audio_seconds = audio.len() as f64 / sample_rate as f64;
    headers.insert("x-audio-seconds", HeaderValue::from_str(&audio_seconds.to_string()).expect("ascii"));
    for (k, v) in extra {
        headers.insert(*k, HeaderValue::from_str(v).expect("ascii"));
    }
    Ok(resp)
}

/// Shared body of `/render`, usable without HTTP.
pub fn render(state: &ServiceState, req: &RenderRequest) -> Result<(Vec<f32>, f64)> {
    let checkpoint = state.checkpoints.get(&(req.steps, req.rvq_ce)).ok_or_else(|| {
        let available = state.steps(req.rvq_ce);
        let message = if SUPPORTED_STEPS.contains(&req.steps) {
            format!("no checkpoint for {} steps; available: {available:?}", req.steps)
        } else {
            format!("unsupported step count {}; available: {available:?}", req.steps)
        };
        Error::validation("steps", message)
    })?;
    let grid = req.grid.to_grid()?;
    let window = request_window(req.grid.bpm, &state.codec.layout())?;
    let g = generate(checkpoint, &state.codec, &state.basis, &grid, &window, req.seed)?;
    Ok((g.audio, g.seconds))
}

async fn config_handler(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    Json(state.config_json())
}

async fn render_handler(
    State(state): State<Arc<ServiceState>>,
    body: std::result::Result<Json<RenderRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    parse_grid(&req.grid, &state)?;
    let sr = state.codec.config().sample_rate;
    let (steps, seed) = (req.steps, req.seed);
    let worker = state.clone();
    let (audio, seconds) = tokio::task::spawn_blocking(move || render(&worker, &req))
        .await
        .map_err(|e| ApiError::from(Error::Missing(format!("render task failed: {e}"))))??;
    let audio_seconds = audio.len() as f64 / sr as f64;
    let rtf = real_time_factor(seconds, audio_seconds)?;
    wav_response(
        &audio,
        sr,
        &[
            ("x-generation-seconds", seconds.to_string()),
            ("x-rtf", rtf.to_string()),
            ("x-steps", steps.to_string()),
            ("x-seed", seed.to_string()),
        ],
    )
}

async fn baseline_handler(
    State(state): State<Arc<ServiceState>>,
    body: std::result::Result<Json<RenderRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let (grid, window) = parse_grid(&req.grid, &state)?;
    let sr = state.codec.config().sample_rate;
    wav_response(&render_procedural(&grid, &window, sr), sr, &[])
}

/// Heatmap of `h` with features as rows and frames as columns; each row is
/// z-scored over time.
pub fn conditioning_png(h: &Frames) -> Result<Vec<u8>> {
    let (t, c) = (h.rows(), h.dim());
    let mut img = RgbImage::new(2 * t as u32, c as u32);
    for f in 0..c {
        let col: Vec<f64> = (0..t).map(|j| h.row(j)[f]).collect();
        let mean = col.iter().sum::<f64>() / t as f64;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64).sqrt();
        for (j, v) in col.iter().enumerate() {
            let z = if std > 0.0 { ((v - mean) / std / 3.0).clamp(-1.0, 1.0) } else { 0.0 };
            let a = (255.0 * (1.0 - z.abs())) as u8;
            let px = if z >= 0.0 { Rgb([255, a, a]) } else { Rgb([a, a, 255]) };
            img.put_pixel(2 * j as u32, f as u32, px);
            img.put_pixel(2 * j as u32 + 1, f as u32, px);
        }
    }
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

fn diagnostics(state: &ServiceState, doc: &GridDocument) -> ApiResult<Response> {
    let (grid, window) = parse_grid(doc, state)?;
    let h = state.frontend.build(&grid, &window, state.codec.config().frame_rate())?.h;
    let png = conditioning_png(&h)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], Bytes::from(png)).into_response())
}

async fn diagnostics_get(
    State(state): State<Arc<ServiceState>>,
    query: std::result::Result<Query<GridQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query.map_err(|r| ApiError::bad(Some("grid".into()), r.body_text()))?;
    let doc: GridDocument = serde_json::from_str(&q.grid).map_err(|e| ApiError::bad(Some("grid".into()), e.to_string()))?;
    diagnostics(&state, &doc)
}

async fn diagnostics_post(
    State(state): State<Arc<ServiceState>>,
    body: std::result::Result<Json<GridDocument>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(doc) = body?;
    diagnostics(&state, &doc)
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/config", get(config_handler))
        .route("/render", post(render_handler))
        .route("/baseline-render", post(baseline_handler))
        .route("/diagnostics/conditioning", get(diagnostics_get).post(diagnostics_post))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn serve(state: ServiceState, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await?;
    Ok(())
}
