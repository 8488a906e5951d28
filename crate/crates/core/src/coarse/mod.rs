//! Coarse pose estimation: sparse query keypoints are matched against the
//! scene's distilled descriptors by cosine similarity and the resulting
//! 2D-3D correspondences are solved with PnP inside RANSAC.

mod matching;
mod pnp;
mod ransac;

pub use matching::{match_descriptors, write_correspondences, Correspondence, MatchError};
pub use pnp::{
    p3p, reprojection_error_sq, solve_pnp, solve_pnp_minimal, PnpError, PnpPoint, MIN_PNP_POINTS,
};
pub use ransac::{ransac_pnp, RansacConfig, RansacError, RansacOutcome};

use thiserror::Error;

use crate::descriptors::{DescriptorError, DescriptorProvider, DEFAULT_KEYPOINT_COUNT};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::raster::Raster;
use crate::render::Scene;

#[derive(Debug, Error)]
pub enum CoarseError {
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Ransac(#[from] RansacError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseConfig {
    /// Number of most-reliable query keypoints to sample.
    pub keypoints: usize,
    pub ransac: RansacConfig,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        CoarseConfig {
            keypoints: DEFAULT_KEYPOINT_COUNT,
            ransac: RansacConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoarseOutcome {
    pub pose: Pose,
    pub correspondences: Vec<Correspondence>,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
}

/// Full coarse stage: sparse keypoints -> cosine matching -> RANSAC PnP.
pub fn localize_coarse(
    query: &Raster,
    scene: &Scene,
    k: &CameraIntrinsics,
    provider: &dyn DescriptorProvider,
    config: &CoarseConfig,
) -> Result<CoarseOutcome, CoarseError> {
    let keypoints = provider.sparse_keypoints(query, config.keypoints)?;
    let correspondences = match_descriptors(&keypoints, scene)?;
    let points: Vec<PnpPoint> = correspondences
        .iter()
        .map(|c| PnpPoint {
            pixel: c.pixel,
            world: scene.gaussians[c.point_index].position,
        })
        .collect();
    let out = ransac_pnp(&points, k, &config.ransac)?;
    Ok(CoarseOutcome {
        pose: out.pose,
        correspondences,
        inliers: out.inliers,
        inlier_count: out.inlier_count,
    })
}
