//! JSON request/response types shared by the service and its clients.
//!
//! The service is a local daemon operating on the filesystem: requests name
//! directories and files on the machine it runs on, heavy artifacts (scenes,
//! images, rasters) stay on disk, and responses carry summaries plus the
//! paths that were written.

use serde::{Deserialize, Serialize};

use splatpose_core::eval::EvalReport;
use splatpose_core::geometry::{Pose, Quat};

pub const API_VERSION: &str = "v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
}

/// Pose as stored in pose files: world-to-camera, wxyz quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMsg {
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl From<Pose> for PoseMsg {
    fn from(p: Pose) -> Self {
        PoseMsg {
            qw: p.rotation.w,
            qx: p.rotation.x,
            qy: p.rotation.y,
            qz: p.rotation.z,
            tx: p.translation.x,
            ty: p.translation.y,
            tz: p.translation.z,
        }
    }
}

impl From<PoseMsg> for Pose {
    fn from(m: PoseMsg) -> Self {
        Pose::new(
            Quat::new(m.qw, m.qx, m.qy, m.qz),
            nalgebra::Vector3::new(m.tx, m.ty, m.tz),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthRequest {
    pub out_dir: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_gaussians: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_views: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_queries: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    /// Also dump teacher feature maps and keypoint files per training view.
    #[serde(default)]
    pub write_teacher: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthResponse {
    pub world_dir: String,
    pub n_gaussians: usize,
    pub n_views: usize,
    pub n_queries: usize,
    pub feature_dim: usize,
    pub scene_diameter: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRequest {
    pub world_dir: String,
    /// Defaults to `<world_dir>/trained.gsplat`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_out: Option<String>,
    /// Defaults to `<world_dir>/loss.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_csv_out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_color: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_opacity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_feature: Option<f64>,
    pub seed: u64,
    /// `synthetic` renders teacher maps from the world's ground truth;
    /// `files` reads `<stem>.fmap` rasters next to the training images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResponse {
    pub scene_path: String,
    pub loss_csv: String,
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadSceneRequest {
    pub scene_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadSceneResponse {
    pub scene_id: String,
    pub n_gaussians: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneListResponse {
    pub scenes: Vec<LoadSceneResponse>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizeRequest {
    /// Either a previously loaded scene id or a path to a scene file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_path: Option<String>,
    /// World directory providing intrinsics and the descriptor oracle.
    pub world_dir: String,
    /// Specific query image names; empty means every query in the world.
    #[serde(default)]
    pub queries: Vec<String>,
    pub variant: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ransac_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ransac_threshold_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warp_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warp_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    /// Write `name qw qx qy qz tx ty tz` estimates here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates_out: Option<String>,
    /// Write per-query pose traces (`trace_<stem>.csv`) into this directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces_out: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryResult {
    pub name: String,
    pub pose: PoseMsg,
    pub correspondences: usize,
    pub inliers: usize,
    pub warp_initial_loss: Option<f64>,
    pub warp_final_loss: Option<f64>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizeResponse {
    pub variant: String,
    pub results: Vec<QueryResult>,
    pub estimates_path: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRequest {
    pub estimates_path: String,
    pub ground_truth_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_csv_out: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResponse {
    pub report: EvalReport,
    pub report_csv: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRequest {
    /// Directory holding `trace_*.csv` files from a localization run.
    pub traces_dir: String,
    pub ground_truth_path: String,
    pub curve_csv_out: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg_out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_cm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_deg: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportResponse {
    pub curve_csv: String,
    pub svg: Option<String>,
    pub queries: usize,
    pub final_pct_within: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_msg_round_trip() {
        let pose = Pose::new(
            Quat::new(0.5, 0.5, -0.5, 0.5),
            nalgebra::Vector3::new(1.0, -2.0, 3.0),
        );
        let msg = PoseMsg::from(pose);
        let back: Pose = msg.into();
        assert_eq!(pose, back);
    }
}
