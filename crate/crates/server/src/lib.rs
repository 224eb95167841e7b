//! HTTP session service for the retouching studio.
//!
//! | route | body | response |
//! |---|---|---|
//! | `POST /session` | PNG, at most 32 MiB | `201 {"id"}` |
//! | `POST /session/{id}/fit` | `{"roi":[x,y,w,h],"sigma":5.0}` | fit report plus `"cached"` |
//! | `POST /session/{id}/preview` | `{"roi":[..],"alpha":{"h","m","r"}}` | `image/png` |
//! | `POST /session/{id}/export` | `{"roi":[..],"schedule":[{"h","m","r"},..]}` | `application/zip` |
//! | `GET /healthz` | | `200` |
//!
//! Errors are `{"error":{"code","message"}}`. The fit body is the JSON that
//! `blemish fit` prints, with `"cached"` added; previews and export frames
//! are byte-identical to `blemish retouch --preview-out` and `blemish fade`.

mod session;

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use blemish::chromophore::MixingMatrix;
use blemish::png_io::{decode_png, encode_png};
use blemish::retouch::{
    frame_file_name, FadeReport, FitReport, GainSchedule, GainVector, RetouchConfig,
};
use blemish::Roi;
use serde::{Deserialize, Serialize};

pub use session::{Session, SessionStore, DEFAULT_TTL};

/// Largest accepted upload.
pub const MAX_UPLOAD_BYTES: usize = 32 * 1024 * 1024;

/// Name of the report inside an export archive, as `blemish fade` names it.
pub const EXPORT_REPORT: &str = "fade.json";

const PLACEHOLDER_INDEX: &str = include_str!("../static/index.html");

#[derive(Debug, Clone)]
pub struct StudioConfig {
    pub mixing: MixingMatrix,
    pub retouch: RetouchConfig,
    pub ttl: Duration,
    /// Built studio assets. Without it `/` serves a placeholder page.
    pub static_dir: Option<PathBuf>,
}

impl Default for StudioConfig {
    fn default() -> Self {
        Self {
            mixing: MixingMatrix::bundled(),
            retouch: RetouchConfig::default(),
            ttl: DEFAULT_TTL,
            static_dir: None,
        }
    }
}

pub type AppState = Arc<SessionStore>;

pub fn store(cfg: &StudioConfig) -> AppState {
    Arc::new(SessionStore::new(cfg.mixing.clone(), cfg.retouch.clone(), cfg.ttl))
}

pub fn router(cfg: &StudioConfig, state: AppState) -> Router {
    let api = Router::new()
        .route(
            "/session",
            post(create_session).layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES)),
        )
        .route("/session/{id}/fit", post(fit))
        .route("/session/{id}/preview", post(preview))
        .route("/session/{id}/export", post(export))
        .route("/healthz", get(healthz))
        .with_state(state);
    match &cfg.static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER_INDEX) })),
    }
}

/// Builds the app and serves it until the process is stopped. Expired
/// sessions are swept once a minute.
pub async fn serve(listener: tokio::net::TcpListener, cfg: StudioConfig) -> std::io::Result<()> {
    let state = store(&cfg);
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.evict_expired(std::time::Instant::now());
        }
    });
    axum::serve(listener, router(&cfg, state)).await
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn no_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session `{id}`"))
    }

    fn not_fitted(roi: Roi) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "not_fitted",
            format!("region {roi} has not been fitted in this session"),
        )
    }
}

impl From<blemish::Error> for ApiError {
    fn from(e: blemish::Error) -> Self {
        let (status, code) = match e {
            blemish::Error::InvalidRoi { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_roi"),
            blemish::Error::Parameter(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_parameter"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    code: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code,
                message: &self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn body_bytes(body: Result<Bytes, BytesRejection>) -> ApiResult<Bytes> {
    body.map_err(|r| match r.status() {
        StatusCode::PAYLOAD_TOO_LARGE => ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "too_large",
            format!("uploads are limited to {MAX_UPLOAD_BYTES} bytes"),
        ),
        status => ApiError::new(status, "bad_body", r.body_text()),
    })
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: Result<Bytes, BytesRejection>) -> ApiResult<T> {
    let bytes = body_bytes(body)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

fn session(state: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    state.get(id).ok_or_else(|| ApiError::no_session(id))
}

/// Validates `roi` against the session image.
fn region(s: &Session, [x, y, w, h]: [usize; 4]) -> ApiResult<Roi> {
    let roi = Roi::new(x, y, w, h);
    let img = s.source().image();
    roi.validate(img.width(), img.height())?;
    Ok(roi)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Serialize, Deserialize)]
pub struct CreatedSession {
    pub id: String,
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<(StatusCode, Json<CreatedSession>)> {
    let bytes = body_bytes(body)?;
    let image = blocking(move || {
        decode_png(&bytes).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_image", e.to_string()))
    })
    .await?;
    let s = state.create(image);
    Ok((StatusCode::CREATED, Json(CreatedSession { id: s.id().to_string() })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitRequest {
    roi: [usize; 4],
    #[serde(default)]
    sigma: Option<f64>,
}

#[derive(Serialize)]
struct FitResponse {
    #[serde(flatten)]
    report: FitReport,
    cached: bool,
}

async fn fit(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Response> {
    let s = session(&state, &id)?;
    let req: FitRequest = parse_json(body)?;
    let roi = region(&s, req.roi)?;
    let body = blocking(move || {
        let (prepared, cached) = s.fit(roi, req.sigma)?;
        let response = FitResponse {
            report: FitReport::new(&prepared, s.retoucher().mixing()),
            cached,
        };
        Ok(serde_json::to_string_pretty(&response).expect("fit serializes"))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PreviewRequest {
    roi: [usize; 4],
    #[serde(default)]
    alpha: GainVector,
}

async fn preview(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Response> {
    let s = session(&state, &id)?;
    let req: PreviewRequest = parse_json(body)?;
    let roi = region(&s, req.roi)?;
    req.alpha.validate()?;
    let prepared = s.fitted(roi).ok_or_else(|| ApiError::not_fitted(roi))?;
    let png = blocking(move || {
        let png = Arc::new(encode_png(&s.preview(&prepared, req.alpha)?)?);
        s.remember_preview(png.clone());
        Ok(png)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png.as_ref().clone()).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportRequest {
    roi: [usize; 4],
    schedule: Vec<GainVector>,
}

async fn export(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Response> {
    let s = session(&state, &id)?;
    let req: ExportRequest = parse_json(body)?;
    let roi = region(&s, req.roi)?;
    if req.schedule.is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "empty_schedule",
            "the schedule needs at least one gain vector",
        ));
    }
    let schedule = GainSchedule::from_gains(req.schedule)?;
    let prepared = s.fitted(roi).ok_or_else(|| ApiError::not_fitted(roi))?;
    let archive = blocking(move || {
        let r = s.retoucher();
        let frames = r.fade_prepared(s.source(), prepared, &schedule)?;
        let mut files = Vec::with_capacity(frames.len() + 1);
        for (i, f) in frames.iter().enumerate() {
            files.push((frame_file_name(i), encode_png(&f.result.image)?));
        }
        let report = FadeReport::new(&frames, r.mixing()).to_json_pretty() + "\n";
        files.push((EXPORT_REPORT.to_string(), report.into_bytes()));
        zip_files(&files)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
    })
    .await?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/zip"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"fade.zip\""),
        ],
        archive,
    )
        .into_response())
}

/// Uncompressed archive with fixed timestamps, so equal inputs give equal bytes.
fn zip_files(files: &[(String, Vec<u8>)]) -> zip::result::ZipResult<Vec<u8>> {
    let mut w = zip::ZipWriter::new(std::io::Cursor::new(Vec::new()));
    let opts = zip::write::SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Stored)
        .last_modified_time(zip::DateTime::default());
    for (name, bytes) in files {
        w.start_file(name.as_str(), opts)?;
        w.write_all(bytes)?;
    }
    Ok(w.finish()?.into_inner())
}
