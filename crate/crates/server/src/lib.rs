//! Read-only HTTP service over a trained checkpoint.
//!
//! Endpoints:
//! - `GET /scene`: object registry, granularities and cameras.
//! - `POST /query`: `{embedding | text, granularity, top_k}` to ranked objects.
//! - `GET /render?camera=&object=&time=`: PNG of the full scene, or with one object
//!   highlighted and the rest dimmed.
//! - `GET /export/{object_id}`: the object's Gaussians as PLY.
//!
//! The scene is loaded once and never mutated. Until it is available every endpoint
//! answers 503.

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use segsplat::io::load_checkpoint;
use segsplat::render::{render_highlight, render_scene};
use segsplat::semantics::{export_object, query};
use segsplat::{Camera, Granularity, SceneModel};

/// Port used when `SEGSPLAT_PORT` is unset.
pub const DEFAULT_PORT: u16 = 8080;
/// Luminance kept outside the highlighted object.
pub const DIM: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    /// Concurrent renders allowed; further render requests wait.
    pub render_workers: usize,
    /// Text embedding endpoint: `POST {"text": ..}` answering `{"vector": [..]}`.
    pub embed_url: Option<String>,
    /// Directory served under `/` for the browser console.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            render_workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            embed_url: None,
            static_dir: None,
        }
    }
}

/// Port from `SEGSPLAT_PORT`, falling back to `default`.
pub fn port_from_env(default: u16) -> Result<u16, String> {
    match std::env::var("SEGSPLAT_PORT") {
        Ok(v) => v.parse().map_err(|_| format!("SEGSPLAT_PORT is not a port number: {v:?}")),
        Err(_) => Ok(default),
    }
}

pub struct AppState {
    scene: OnceLock<Arc<SceneModel>>,
    renders: Semaphore,
    http: reqwest::Client,
    config: ServerConfig,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Arc<Self> {
        Arc::new(AppState {
            scene: OnceLock::new(),
            renders: Semaphore::new(config.render_workers.max(1)),
            http: reqwest::Client::new(),
            config,
        })
    }

    pub fn with_scene(scene: SceneModel, config: ServerConfig) -> Arc<Self> {
        let state = AppState::new(config);
        state.install(scene);
        state
    }

    /// Make `scene` available. Only the first call has an effect.
    pub fn install(&self, scene: SceneModel) -> bool {
        self.scene.set(Arc::new(scene)).is_ok()
    }

    pub fn is_ready(&self) -> bool {
        self.scene.get().is_some()
    }

    fn scene(&self) -> Result<Arc<SceneModel>, ApiError> {
        self.scene.get().cloned().ok_or(ApiError::Loading)
    }
}

/// Load a checkpoint on a blocking thread and install it.
pub fn load_in_background(state: Arc<AppState>, checkpoint: PathBuf) -> tokio::task::JoinHandle<segsplat::Result<()>> {
    tokio::task::spawn_blocking(move || {
        let scene = load_checkpoint(&checkpoint)?;
        log::info!("loaded {} ({} Gaussians)", checkpoint.display(), scene.gaussians.len());
        state.install(scene);
        Ok(())
    })
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("checkpoint is still loading")]
    Loading,
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Upstream(String),
    #[error("{0}")]
    Internal(String),
}

impl From<segsplat::Error> for ApiError {
    fn from(e: segsplat::Error) -> Self {
        use segsplat::Error as E;
        match e {
            E::UnknownObject(_) | E::EmptySet(_) => ApiError::NotFound(e.to_string()),
            E::Invalid(_) | E::EmptyRegistry => ApiError::BadRequest(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::Loading => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Upstream(_) => StatusCode::BAD_GATEWAY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.config.static_dir.clone();
    let api = Router::new()
        .route("/scene", get(scene_info))
        .route("/query", post(run_query))
        .route("/render", get(render_png))
        .route("/export/{object_id}", get(export_ply))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Bind `addr` and serve until the task is dropped.
pub async fn serve(addr: std::net::SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInfo {
    pub object_id: u32,
    pub granularity: Granularity,
    pub gaussians: usize,
    pub has_embedding: bool,
    pub first_frame: Option<usize>,
    pub last_frame: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub granularities: Vec<Granularity>,
    pub objects: Vec<ObjectInfo>,
    pub cameras: Vec<Camera>,
    pub gaussians: usize,
    pub dynamic: bool,
}

pub fn describe(scene: &SceneModel) -> SceneInfo {
    let objects = scene
        .object_sets
        .iter()
        .map(|s| {
            let track = scene.masks.registry.tracks.get(&s.object_id);
            ObjectInfo {
                object_id: s.object_id,
                granularity: s.granularity,
                gaussians: s.gaussian_indices.len(),
                has_embedding: s.embedding.is_some(),
                first_frame: track.map(|t| t.first_frame),
                last_frame: track.map(|t| t.last_frame),
            }
        })
        .collect();
    SceneInfo {
        granularities: Granularity::ALL.to_vec(),
        objects,
        cameras: scene.cameras.clone(),
        gaussians: scene.gaussians.len(),
        dynamic: scene.deformation.is_some(),
    }
}

async fn scene_info(State(state): State<Arc<AppState>>) -> Result<Json<SceneInfo>, ApiError> {
    let scene = state.scene()?;
    Ok(Json(describe(&scene)))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    #[serde(default)]
    pub embedding: Option<Vec<f32>>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub granularity: Option<Granularity>,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedObject {
    pub object_id: u32,
    pub granularity: Granularity,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub hits: Vec<RankedObject>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f32>,
}

async fn embed_text(state: &AppState, text: &str) -> Result<Vec<f32>, ApiError> {
    let Some(url) = &state.config.embed_url else {
        return Err(ApiError::BadRequest(
            "text queries need an embedding endpoint; send \"embedding\" instead or start the service with one".into(),
        ));
    };
    let reply = state
        .http
        .post(url)
        .json(&EmbedRequest { text })
        .send()
        .await
        .and_then(|r| r.error_for_status())
        .map_err(|e| ApiError::Upstream(format!("embedding endpoint: {e}")))?;
    let body: EmbedResponse = reply
        .json()
        .await
        .map_err(|e| ApiError::Upstream(format!("embedding endpoint reply: {e}")))?;
    Ok(body.vector)
}

async fn run_query(
    State(state): State<Arc<AppState>>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> Result<Json<QueryResponse>, ApiError> {
    let scene = state.scene()?;
    let Json(req) = body?;
    let vector = match (req.embedding, req.text) {
        (Some(v), None) => v,
        (None, Some(t)) => embed_text(&state, &t).await?,
        (Some(_), Some(_)) => return Err(ApiError::BadRequest("give either \"embedding\" or \"text\", not both".into())),
        (None, None) => return Err(ApiError::BadRequest("missing \"embedding\" or \"text\"".into())),
    };
    if req.top_k == Some(0) {
        return Err(ApiError::BadRequest("top_k must be positive".into()));
    }
    if let Some(dim) = scene.object_sets.iter().find_map(|s| s.embedding.as_ref().map(Vec::len)) {
        if vector.len() != dim {
            return Err(ApiError::BadRequest(format!(
                "embedding has {} dimensions, the scene uses {dim}",
                vector.len()
            )));
        }
    }
    let result = query(&scene, &vector, req.granularity, req.top_k)?;
    Ok(Json(QueryResponse {
        hits: result
            .hits
            .into_iter()
            .map(|h| RankedObject {
                object_id: h.object_id,
                granularity: h.granularity,
                score: h.score,
            })
            .collect(),
    }))
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct RenderParams {
    pub camera: usize,
    pub object: Option<u32>,
    /// Defaults to the camera's own time.
    pub time: Option<f64>,
}

async fn render_png(
    State(state): State<Arc<AppState>>,
    params: Result<Query<RenderParams>, QueryRejection>,
) -> Result<Response, ApiError> {
    let scene = state.scene()?;
    let Query(params) = params?;
    let camera = scene
        .cameras
        .get(params.camera)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("unknown camera {}", params.camera)))?;
    let time = params.time.unwrap_or(camera.time);
    if !(0.0..=1.0).contains(&time) {
        return Err(ApiError::BadRequest(format!("time {time} is outside [0, 1]")));
    }
    let level = match params.object {
        Some(id) => Some(scene.level_of(id).ok_or_else(|| ApiError::NotFound(format!("unknown object {id}")))?),
        None => None,
    };
    let _permit = state.renders.acquire().await.map_err(|e| ApiError::Internal(e.to_string()))?;
    let png = tokio::task::spawn_blocking(move || -> Result<Vec<u8>, ApiError> {
        let image = match (params.object, level) {
            (Some(id), Some(level)) => render_highlight(&scene, id, level, &camera, time, DIM)?,
            _ => render_scene(&scene, &camera, time).raster.image,
        };
        Ok(image.to_png_bytes()?)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn export_ply(
    State(state): State<Arc<AppState>>,
    UrlPath(object_id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let scene = state.scene()?;
    let id: u32 = object_id
        .parse()
        .map_err(|_| ApiError::BadRequest(format!("object id {object_id:?} is not an integer")))?;
    let level = scene.level_of(id).ok_or_else(|| ApiError::NotFound(format!("unknown object {id}")))?;
    let mut bytes = Vec::new();
    export_object(&scene, id, level, &mut bytes)?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}
