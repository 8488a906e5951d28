//! 2D-3D correspondence search: each query descriptor matches the scene
//! Gaussian maximizing cosine similarity.

use nalgebra::Vector2;
use rayon::prelude::*;
use thiserror::Error;

use crate::descriptors::KeypointSet;
use crate::render::Scene;

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("query descriptor dim {got} does not match scene feature dim {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("cannot match against an empty scene")]
    EmptyScene,
}

/// A 2D query pixel matched to a scene Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub pixel: Vector2<f64>,
    pub point_index: usize,
    /// Cosine similarity in [-1, 1].
    pub similarity: f64,
}

const ZERO_NORM: f64 = 1e-12;

/// Exhaustive cosine-similarity matching of query keypoints against all
/// scene points. Zero-norm descriptors on either side are skipped; ties
/// break toward the lowest scene index.
pub fn match_descriptors(
    query: &KeypointSet,
    scene: &Scene,
) -> Result<Vec<Correspondence>, MatchError> {
    if scene.is_empty() {
        return Err(MatchError::EmptyScene);
    }
    if let Some(d) = query.descriptors.first() {
        if d.len() != scene.feature_dim {
            return Err(MatchError::DimMismatch {
                expected: scene.feature_dim,
                got: d.len(),
            });
        }
    }
    let point_norms: Vec<f64> = scene
        .gaussians
        .iter()
        .map(|g| g.feature.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();

    let matches: Vec<Option<Correspondence>> = (0..query.len())
        .into_par_iter()
        .map(|i| {
            let q = &query.descriptors[i];
            let q_norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if q_norm < ZERO_NORM {
                return None;
            }
            let mut best: Option<(usize, f64)> = None;
            for (l, g) in scene.gaussians.iter().enumerate() {
                if point_norms[l] < ZERO_NORM {
                    continue;
                }
                let dot: f64 = q.iter().zip(&g.feature).map(|(a, b)| a * b).sum();
                let cos = dot / (q_norm * point_norms[l]);
                if best.map_or(true, |(_, s)| cos > s) {
                    best = Some((l, cos));
                }
            }
            best.map(|(point_index, similarity)| Correspondence {
                pixel: query.pixels[i],
                point_index,
                similarity,
            })
        })
        .collect();

    Ok(matches.into_iter().flatten().collect())
}

/// Debug dump: one `u v point_index similarity` line per correspondence.
pub fn write_correspondences(
    path: &std::path::Path,
    corrs: &[Correspondence],
) -> std::io::Result<()> {
    let mut out = String::from("# u v point_index similarity\n");
    for c in corrs {
        out.push_str(&format!(
            "{} {} {} {}\n",
            c.pixel.x, c.pixel.y, c.point_index, c.similarity
        ));
    }
    std::fs::write(path, out)
}
