//! RANSAC around the minimal PnP solver: seeded hypothesis sampling, inlier
//! scoring at a pixel threshold, best-by-count tournament (ties keep the
//! earlier iteration) and a full polish refit on the inlier set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::pnp::{
    reprojection_error_sq, solve_pnp, solve_pnp_minimal, PnpError, PnpPoint, MIN_PNP_POINTS,
};
use crate::geometry::{CameraIntrinsics, Pose};

#[derive(Debug, Error, PartialEq)]
pub enum RansacError {
    #[error(transparent)]
    Pnp(#[from] PnpError),
    #[error(
        "no consensus: best hypothesis had {best_inliers} inliers over {iterations} iterations \
         (need >= {min})"
    )]
    NoConsensus {
        best_inliers: usize,
        iterations: usize,
        min: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier reprojection threshold in pixels.
    pub threshold_px: f64,
    pub min_samples: usize,
    pub seed: u64,
    /// Stop early once this inlier ratio is reached.
    pub early_exit_ratio: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            iterations: 20_000,
            threshold_px: 3.0,
            min_samples: MIN_PNP_POINTS,
            seed: 0,
            early_exit_ratio: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RansacOutcome {
    pub pose: Pose,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    /// Iteration index of the winning hypothesis.
    pub best_iteration: usize,
}

fn count_inliers(
    pose: &Pose,
    k: &CameraIntrinsics,
    points: &[PnpPoint],
    threshold_sq: f64,
    mask: &mut [bool],
) -> usize {
    let mut count = 0;
    for (i, p) in points.iter().enumerate() {
        let inlier = reprojection_error_sq(pose, k, p) < threshold_sq;
        mask[i] = inlier;
        count += inlier as usize;
    }
    count
}

/// Robust pose from 2D-3D points. Deterministic given the seed; the refit on
/// inliers is only adopted when it does not lose inliers.
pub fn ransac_pnp(
    points: &[PnpPoint],
    k: &CameraIntrinsics,
    config: &RansacConfig,
) -> Result<RansacOutcome, RansacError> {
    let n = points.len();
    let min_samples = config.min_samples.max(MIN_PNP_POINTS);
    if n < min_samples {
        return Err(PnpError::InsufficientData {
            min: min_samples,
            got: n,
        }
        .into());
    }

    let threshold_sq = config.threshold_px * config.threshold_px;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(usize, usize, Pose)> = None; // (count, iteration, pose)
    let mut mask = vec![false; n];
    let mut sample = Vec::with_capacity(min_samples);

    for iteration in 0..config.iterations {
        sample.clear();
        for idx in rand::seq::index::sample(&mut rng, n, min_samples) {
            sample.push(points[idx]);
        }
        let Ok(hypothesis) = solve_pnp_minimal(&sample, k) else {
            continue;
        };
        let count = count_inliers(&hypothesis, k, points, threshold_sq, &mut mask);
        if best.as_ref().map_or(true, |(c, _, _)| count > *c) {
            best = Some((count, iteration, hypothesis));
            if count as f64 >= config.early_exit_ratio * n as f64 {
                break;
            }
        }
    }

    let Some((best_count, best_iteration, best_pose)) = best else {
        return Err(RansacError::NoConsensus {
            best_inliers: 0,
            iterations: config.iterations,
            min: min_samples,
        });
    };
    if best_count < min_samples {
        return Err(RansacError::NoConsensus {
            best_inliers: best_count,
            iterations: config.iterations,
            min: min_samples,
        });
    }

    count_inliers(&best_pose, k, points, threshold_sq, &mut mask);
    let inlier_points: Vec<PnpPoint> = points
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| *p)
        .collect();

    let mut final_pose = best_pose;
    let mut final_count = best_count;
    if let Ok(refit) = solve_pnp(&inlier_points, k) {
        let mut refit_mask = vec![false; n];
        let refit_count = count_inliers(&refit, k, points, threshold_sq, &mut refit_mask);
        if refit_count >= best_count {
            final_pose = refit;
            final_count = refit_count;
            mask = refit_mask;
        }
    }

    Ok(RansacOutcome {
        pose: final_pose,
        inliers: mask,
        inlier_count: final_count,
        best_iteration,
    })
}
