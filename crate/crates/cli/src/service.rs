//! Read-only HTTP render service over one loaded checkpoint.
//!
//! `GET /api/scene` returns scene metadata, `POST /api/render` returns a PNG,
//! `GET /api/health` answers 200. At most `max_in_flight` renders run at
//! once; extra requests get 429 rather than queueing.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use lapnerf::metrics::sha256_hex;

use crate::scene::{LoadedScene, PoseSpec, Quality};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_dimension: u32,
    /// Concurrent renders; 0 rejects every render with 429.
    pub max_in_flight: usize,
    /// `None` allows any origin.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_dimension: 1920,
            max_in_flight: 4,
            cors_origin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub pose: PoseSpec,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub quality: Quality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraInfo {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsInfo {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub bounds: BoundsInfo,
    pub initial_pose: PoseSpec,
    pub camera: CameraInfo,
    pub checkpoint_id: String,
    pub step: u64,
    pub max_dimension: u32,
}

pub struct AppState {
    scene: LoadedScene,
    config: ServiceConfig,
    permits: Arc<Semaphore>,
    failures: AtomicU64,
}

impl AppState {
    pub fn new(scene: LoadedScene, config: ServiceConfig) -> Self {
        Self {
            permits: Arc::new(Semaphore::new(config.max_in_flight)),
            scene,
            config,
            failures: AtomicU64::new(0),
        }
    }

    pub fn meta(&self) -> SceneMeta {
        let s = &self.scene;
        let c = &s.header.camera;
        let b = s.bounds();
        SceneMeta {
            bounds: BoundsInfo { min: b.min, max: b.max },
            initial_pose: PoseSpec::from_pose(&s.default_pose()),
            camera: CameraInfo {
                width: c.width,
                height: c.height,
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
            },
            checkpoint_id: s.checkpoint_id.clone(),
            step: s.header.step,
            max_dimension: self.config.max_dimension,
        }
    }

    /// Opaque id for a failed request; the details go to the log only.
    fn failure_id(&self) -> String {
        let n = self.failures.fetch_add(1, Ordering::Relaxed);
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        sha256_hex(format!("{}:{n}:{nanos}", self.scene.checkpoint_id).as_bytes())[..12].to_string()
    }
}

fn error(status: StatusCode, body: serde_json::Value) -> Response {
    (status, Json(body)).into_response()
}

fn bad_request(field: &str, message: &str) -> Response {
    error(StatusCode::BAD_REQUEST, json!({ "error": message, "field": field }))
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = match &state.config.cors_origin {
        Some(o) => match HeaderValue::from_str(o) {
            Ok(v) => CorsLayer::new().allow_origin(AllowOrigin::exact(v)),
            Err(_) => CorsLayer::new().allow_origin(Any),
        },
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    Router::new()
        .route("/api/health", get(|| async { "ok" }))
        .route("/api/scene", get(scene_meta))
        .route("/api/render", post(render))
        .layer(DefaultBodyLimit::max(64 * 1024))
        .layer(cors)
        .with_state(state)
}

async fn scene_meta(State(state): State<Arc<AppState>>) -> Json<SceneMeta> {
    Json(state.meta())
}

/// Parses and validates a request body. Errors carry the JSON path of the
/// offending field.
pub fn parse_request(body: &[u8], max_dimension: u32) -> Result<RenderRequest, Response> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    let req: RenderRequest = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        bad_request(if path == "." { "body" } else { &path }, &e.inner().to_string())
    })?;
    for (name, v) in [("width", req.width), ("height", req.height)] {
        if v == 0 {
            return Err(bad_request(name, "must be at least 1"));
        }
        if v > max_dimension {
            return Err(error(
                StatusCode::PAYLOAD_TOO_LARGE,
                json!({ "error": format!("{name} {v} exceeds the maximum {max_dimension}"), "field": name, "max": max_dimension }),
            ));
        }
    }
    Ok(req)
}

async fn render(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req = match parse_request(&body, state.config.max_dimension) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let pose = match req.pose.to_pose() {
        Ok(p) => p,
        Err(e) => return bad_request(e.field, &e.message),
    };
    let Ok(permit) = state.permits.clone().try_acquire_owned() else {
        return error(StatusCode::TOO_MANY_REQUESTS, json!({ "error": "render queue is full, retry shortly" }));
    };
    let worker = state.clone();
    let result = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        worker.scene.render_png(&pose, req.width, req.height, req.quality)
    })
    .await;
    match result {
        Ok(Ok(png)) => ([(header::CONTENT_TYPE, "image/png")], png).into_response(),
        failure => {
            let id = state.failure_id();
            match failure {
                Ok(Err(e)) => log::error!("render {id} failed: {e}"),
                Err(e) => log::error!("render {id} panicked: {e}"),
                Ok(Ok(_)) => unreachable!(),
            }
            error(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": "render failed", "id": id }))
        }
    }
}

pub async fn serve(state: Arc<AppState>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
