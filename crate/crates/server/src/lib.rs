//! Axum service exposing the localization pipeline.
//!
//! The server is a local daemon: it reads and writes workspace files named
//! in the requests. Scenes loaded via `/v1/scenes/load` stay resident and
//! shared across requests, so a fleet of clients can localize against one
//! in-memory map. Heavy handlers run on the blocking pool.

mod error;
mod ops;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};

use splatpose_core::render::Scene;
use splatpose_protocol as proto;

pub use error::ApiError;

#[derive(Default)]
pub struct AppState {
    scenes: RwLock<HashMap<String, Arc<Scene>>>,
    next_id: AtomicU64,
}

impl AppState {
    fn insert_scene(&self, scene: Scene) -> (String, Arc<Scene>) {
        let id = format!("scene-{}", self.next_id.fetch_add(1, Ordering::Relaxed) + 1);
        let scene = Arc::new(scene);
        self.scenes
            .write()
            .expect("scene map lock")
            .insert(id.clone(), scene.clone());
        (id, scene)
    }

    fn get_scene(&self, id: &str) -> Option<Arc<Scene>> {
        self.scenes.read().expect("scene map lock").get(id).cloned()
    }

    fn list_scenes(&self) -> Vec<proto::LoadSceneResponse> {
        let scenes = self.scenes.read().expect("scene map lock");
        let mut out: Vec<proto::LoadSceneResponse> = scenes
            .iter()
            .map(|(id, s)| proto::LoadSceneResponse {
                scene_id: id.clone(),
                n_gaussians: s.len(),
                feature_dim: s.feature_dim,
            })
            .collect();
        out.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
        out
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/synth", post(synth))
        .route("/v1/train", post(train))
        .route("/v1/scenes/load", post(scenes_load))
        .route("/v1/scenes", get(scenes_list))
        .route("/v1/localize", post(localize))
        .route("/v1/eval", post(eval))
        .route("/v1/report", post(report))
        .with_state(state)
}

/// Binds the service and runs it until the task is dropped or the process
/// exits. Returns the bound address (useful with port 0).
pub async fn serve(addr: SocketAddr) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    let app = router(Arc::new(AppState::default()));
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok((bound, handle))
}

async fn health() -> Json<proto::HealthResponse> {
    Json(proto::HealthResponse {
        status: "ok".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

async fn synth(
    Json(req): Json<proto::SynthRequest>,
) -> Result<Json<proto::SynthResponse>, ApiError> {
    blocking(move || ops::run_synth(&req)).await.map(Json)
}

async fn train(
    Json(req): Json<proto::TrainRequest>,
) -> Result<Json<proto::TrainResponse>, ApiError> {
    blocking(move || ops::run_train(&req)).await.map(Json)
}

async fn scenes_load(
    State(state): State<Arc<AppState>>,
    Json(req): Json<proto::LoadSceneRequest>,
) -> Result<Json<proto::LoadSceneResponse>, ApiError> {
    let scene = blocking(move || ops::load_scene_file(&req.scene_path)).await?;
    let n_gaussians = scene.len();
    let feature_dim = scene.feature_dim;
    let (scene_id, _) = state.insert_scene(scene);
    Ok(Json(proto::LoadSceneResponse {
        scene_id,
        n_gaussians,
        feature_dim,
    }))
}

async fn scenes_list(State(state): State<Arc<AppState>>) -> Json<proto::SceneListResponse> {
    Json(proto::SceneListResponse {
        scenes: state.list_scenes(),
    })
}

async fn localize(
    State(state): State<Arc<AppState>>,
    Json(req): Json<proto::LocalizeRequest>,
) -> Result<Json<proto::LocalizeResponse>, ApiError> {
    let scene = match (&req.scene_id, &req.scene_path) {
        (Some(id), _) => state
            .get_scene(id)
            .ok_or_else(|| ApiError::not_found(format!("no loaded scene `{id}`")))?,
        (None, Some(path)) => {
            let path = path.clone();
            Arc::new(blocking(move || ops::load_scene_file(&path)).await?)
        }
        (None, None) => {
            return Err(ApiError::bad_request(
                "localize requires scene_id or scene_path",
            ))
        }
    };
    blocking(move || ops::run_localize(scene, &req)).await.map(Json)
}

async fn eval(Json(req): Json<proto::EvalRequest>) -> Result<Json<proto::EvalResponse>, ApiError> {
    blocking(move || ops::run_eval(&req)).await.map(Json)
}

async fn report(
    Json(req): Json<proto::ReportRequest>,
) -> Result<Json<proto::ReportResponse>, ApiError> {
    blocking(move || ops::run_report(&req)).await.map(Json)
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker panicked: {e}")))?
}
