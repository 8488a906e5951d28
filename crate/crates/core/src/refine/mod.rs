//! Test-time pose refinement.
//!
//! The warp stage renders the scene once at the coarse pose, lifts its
//! pixels to world space through the rendered depth, and runs Adam on the
//! seven pose parameters (quaternion renormalized each step) against the
//! photometric warp loss. The optional feature stage re-renders per round,
//! re-matches query keypoints against the rendered descriptor map and
//! re-solves PnP on the back-projected matches.

mod warp;

pub use warp::{bilinear_sample, bilinear_with_grad, warp, WarpEval, WarpField, WarpSample};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::coarse::{localize_coarse, solve_pnp, CoarseConfig, CoarseError, CoarseOutcome, PnpPoint};
use crate::descriptors::{DescriptorError, DescriptorProvider, DEFAULT_KEYPOINT_COUNT};
use crate::distill::Adam;
use crate::geometry::{backproject, inverse, CameraIntrinsics, Pose, Quat};
use crate::raster::Raster;
use crate::render::{render, RenderChannels, Scene};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("no valid overlap between the query and the rendered view")]
    NoOverlap,
    #[error("warp optimization diverged at iteration {iteration}: loss {loss} > 10x initial {initial}")]
    Diverged {
        iteration: usize,
        loss: f64,
        initial: f64,
    },
    #[error(transparent)]
    Coarse(#[from] CoarseError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

/// Settings for both refinement stages.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    /// Adam learning rate on the pose parameters.
    pub lr: f64,
    /// Warp iterations; 250 suits room-scale scenes, 350 larger ones.
    pub iterations: usize,
    pub feature_rounds: usize,
    /// Relative loss change below which the warp loop stops early; 0 runs
    /// every iteration.
    pub convergence_tol: f64,
    /// Pixel stride for warp samples; `None` picks 1 up to 640x480 and 2
    /// above.
    pub sample_stride: Option<usize>,
    /// Keypoints used per feature-refinement round.
    pub keypoints: usize,
    /// Half-width of the guided-match window around each keypoint (pixels).
    pub feature_search_radius: usize,
    /// Matches below this cosine similarity are discarded.
    pub feature_min_similarity: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            lr: 0.001,
            iterations: 250,
            feature_rounds: 5,
            convergence_tol: 0.0,
            sample_stride: None,
            keypoints: DEFAULT_KEYPOINT_COUNT,
            feature_search_radius: 24,
            feature_min_similarity: 0.7,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

fn auto_stride(k: &CameraIntrinsics, config: &RefineConfig) -> usize {
    config
        .sample_stride
        .unwrap_or(if k.width * k.height > 640 * 480 { 2 } else { 1 })
}

/// Photometric warp loss between the query and a one-time render, averaged
/// over valid samples (valid rendered depth, warp in bounds).
pub fn warp_loss(
    query: &Raster,
    rendered_rgb: &Raster,
    rendered_depth: &Raster,
    render_pose: &Pose,
    opt_pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<f64, RefineError> {
    let field = WarpField::build(rendered_rgb, rendered_depth, render_pose, k, 1);
    field
        .loss(query, opt_pose, k)
        .ok_or(RefineError::NoOverlap)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpTracePoint {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct WarpRefineOutcome {
    /// Lowest-loss iterate seen during the run.
    pub pose: Pose,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub best_iteration: usize,
    pub trace: Vec<WarpTracePoint>,
    /// Pose after each evaluated iteration, aligned with `trace`.
    pub poses: Vec<Pose>,
}

fn pose_to_params(pose: &Pose) -> [f64; 7] {
    let q = pose.rotation.normalize().unwrap_or(Quat::IDENTITY);
    [
        q.w,
        q.x,
        q.y,
        q.z,
        pose.translation.x,
        pose.translation.y,
        pose.translation.z,
    ]
}

fn params_to_pose(p: &[f64; 7]) -> Pose {
    let q = Quat::new(p[0], p[1], p[2], p[3])
        .normalize()
        .unwrap_or(Quat::IDENTITY);
    Pose::new(q, Vector3::new(p[4], p[5], p[6]))
}

/// Warp-loss gradient descent from `coarse_pose`. The scene is rendered
/// exactly once; Adam updates the quaternion and translation, renormalizing
/// the quaternion after each step, and the lowest-loss iterate wins.
pub fn refine_warp(
    query: &Raster,
    scene: &Scene,
    coarse_pose: &Pose,
    k: &CameraIntrinsics,
    config: &RefineConfig,
) -> Result<WarpRefineOutcome, RefineError> {
    let rendered = render(scene, coarse_pose, k, RenderChannels::rgb_depth());
    let field = WarpField::build(
        rendered.rgb.as_ref().expect("rgb requested"),
        rendered.depth.as_ref().expect("depth requested"),
        coarse_pose,
        k,
        auto_stride(k, config),
    );
    if field.is_empty() {
        return Err(RefineError::NoOverlap);
    }

    let mut params = pose_to_params(coarse_pose);
    let mut optimizer = Adam::new(7, config.lr, config.beta1, config.beta2, config.eps);
    let mut trace = Vec::with_capacity(config.iterations + 1);
    let mut poses = Vec::with_capacity(config.iterations + 1);
    let mut best = (f64::INFINITY, 0usize, *coarse_pose);
    let mut initial = f64::NAN;
    let mut prev_loss = f64::NAN;
    let mut calm_streak = 0usize;

    for iteration in 0..=config.iterations {
        let pose = params_to_pose(&params);
        let eval = field.loss_and_grad(query, &pose, k);
        if eval.valid_samples == 0 {
            return Err(RefineError::NoOverlap);
        }
        trace.push(WarpTracePoint {
            iteration,
            loss: eval.loss,
        });
        poses.push(pose);
        if iteration == 0 {
            initial = eval.loss;
        } else if eval.loss > 10.0 * initial && initial > 0.0 {
            return Err(RefineError::Diverged {
                iteration,
                loss: eval.loss,
                initial,
            });
        }
        if eval.loss < best.0 {
            best = (eval.loss, iteration, pose);
        }
        if iteration == config.iterations {
            break;
        }
        if config.convergence_tol > 0.0 && iteration > 0 {
            let change = (prev_loss - eval.loss).abs();
            if change < config.convergence_tol * initial.max(1e-12) {
                calm_streak += 1;
                if calm_streak >= 10 {
                    break;
                }
            } else {
                calm_streak = 0;
            }
        }
        prev_loss = eval.loss;
        optimizer.step(&mut params, &eval.grad);
        let q = Quat::new(params[0], params[1], params[2], params[3])
            .normalize()
            .unwrap_or(Quat::IDENTITY);
        params[0] = q.w;
        params[1] = q.x;
        params[2] = q.y;
        params[3] = q.z;
    }

    Ok(WarpRefineOutcome {
        pose: best.2,
        initial_loss: initial,
        best_loss: best.0,
        best_iteration: best.1,
        trace,
        poses,
    })
}

#[derive(Debug, Clone)]
pub struct FeatureRefineOutcome {
    pub pose: Pose,
    pub rounds_run: usize,
    /// Set when a round had too few matches for PnP and kept the prior pose.
    pub degraded: bool,
}

/// Iterative feature-based refinement: per round, render descriptors and
/// depth at the current pose, match query keypoints into the rendered map
/// (cosine over valid-depth pixels) and re-solve PnP on the back-projected
/// 2D(query)-3D pairs.
///
/// Matching is guided: candidates are searched in a window around each
/// keypoint, the keypoint's own pixel must carry valid rendered depth, and
/// ties break toward the spatially closest pixel. Unconstrained cosine
/// matching is degenerate along a single splat's footprint (all its pixels
/// are proportional), which feeds structured outliers into the
/// least-squares PnP.
pub fn refine_feature(
    query: &Raster,
    scene: &Scene,
    pose: &Pose,
    k: &CameraIntrinsics,
    provider: &dyn DescriptorProvider,
    rounds: usize,
    config: &RefineConfig,
) -> Result<FeatureRefineOutcome, RefineError> {
    let keypoints = provider.sparse_keypoints(query, config.keypoints)?;
    let radius = config.feature_search_radius.max(1) as i64;
    let mut current = *pose;
    for round in 0..rounds {
        let rendered = render(scene, &current, k, RenderChannels::features_depth());
        let feat = rendered.features.as_ref().expect("features requested");
        let depth = rendered.depth.as_ref().expect("depth requested");
        let (w, h) = (depth.width as i64, depth.height as i64);
        let v = feat.channels;

        let render_inv = inverse(&current);
        let pairs: Vec<PnpPoint> = (0..keypoints.len())
            .into_par_iter()
            .filter_map(|i| {
                let q = &keypoints.descriptors[i];
                let qn = q.iter().map(|a| a * a).sum::<f64>().sqrt();
                if qn < 1e-12 {
                    return None;
                }
                let kx = keypoints.pixels[i].x.round() as i64;
                let ky = keypoints.pixels[i].y.round() as i64;
                if kx < 0 || kx >= w || ky < 0 || ky >= h {
                    return None;
                }
                if depth.get(kx as usize, ky as usize, 0) <= 0.0 {
                    return None;
                }
                // Best (cosine, -distance) within the window.
                let mut best: Option<(f64, i64, i64, i64)> = None;
                for y in (ky - radius).max(0)..=(ky + radius).min(h - 1) {
                    for x in (kx - radius).max(0)..=(kx + radius).min(w - 1) {
                        if depth.get(x as usize, y as usize, 0) <= 0.0 {
                            continue;
                        }
                        let d = feat.pixel(x as usize, y as usize);
                        let mut dot = 0.0;
                        let mut norm2 = 0.0;
                        for c in 0..v {
                            dot += q[c] * d[c];
                            norm2 += d[c] * d[c];
                        }
                        if norm2 < 1e-24 {
                            continue;
                        }
                        let cos = dot / (qn * norm2.sqrt());
                        let dist2 = (x - kx) * (x - kx) + (y - ky) * (y - ky);
                        let better = match best {
                            None => true,
                            Some((bc, bd, _, _)) => cos > bc || (cos == bc && dist2 < bd),
                        };
                        if better {
                            best = Some((cos, dist2, x, y));
                        }
                    }
                }
                let (cos, _, x, y) = best?;
                if cos < config.feature_min_similarity {
                    return None;
                }
                let matched = subpixel_peak(q, qn, feat, depth, x, y);
                let z = sample_depth(depth, &matched)
                    .unwrap_or_else(|| depth.get(x as usize, y as usize, 0));
                let p_cam = backproject(&matched, z, k).ok()?;
                Some(PnpPoint {
                    pixel: keypoints.pixels[i],
                    world: render_inv.transform(&p_cam),
                })
            })
            .collect();

        match solve_pnp_trimmed(&pairs, k) {
            Some(new_pose) => current = new_pose,
            None => {
                return Ok(FeatureRefineOutcome {
                    pose: current,
                    rounds_run: round,
                    degraded: true,
                })
            }
        }
    }
    Ok(FeatureRefineOutcome {
        pose: current,
        rounds_run: rounds,
        degraded: false,
    })
}

/// PnP with one trimming pass: solve, drop pairs whose reprojection error
/// exceeds twice the median (floored at 1 px), re-solve on the survivors.
fn solve_pnp_trimmed(pairs: &[PnpPoint], k: &CameraIntrinsics) -> Option<Pose> {
    let first = solve_pnp(pairs, k).ok()?;
    let mut errors: Vec<f64> = pairs
        .iter()
        .map(|p| crate::coarse::reprojection_error_sq(&first, k, p).sqrt())
        .collect();
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let gate = (2.0 * median).max(1.0);
    let kept: Vec<PnpPoint> = pairs
        .iter()
        .zip(errors.drain(..))
        .filter(|(_, e)| *e <= gate)
        .map(|(p, _)| *p)
        .collect();
    if kept.len() < pairs.len() && kept.len() >= crate::coarse::MIN_PNP_POINTS {
        solve_pnp(&kept, k).ok().or(Some(first))
    } else {
        Some(first)
    }
}

/// Quadratic fit over the 3x3 cosine-score neighborhood of the best integer
/// match; falls back to the integer peak when the fit is not a proper
/// maximum or any neighbor is invalid.
fn subpixel_peak(
    q: &[f64],
    qn: f64,
    feat: &Raster,
    depth: &Raster,
    x: i64,
    y: i64,
) -> Vector2<f64> {
    let center = Vector2::new(x as f64, y as f64);
    let (w, h) = (feat.width as i64, feat.height as i64);
    if x < 1 || y < 1 || x + 1 >= w || y + 1 >= h {
        return center;
    }
    let mut s = [[0.0f64; 3]; 3];
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let (px, py) = ((x + dx) as usize, (y + dy) as usize);
            if depth.get(px, py, 0) <= 0.0 {
                return center;
            }
            let d = feat.pixel(px, py);
            let mut dot = 0.0;
            let mut norm2 = 0.0;
            for c in 0..feat.channels {
                dot += q[c] * d[c];
                norm2 += d[c] * d[c];
            }
            if norm2 < 1e-24 {
                return center;
            }
            s[(dy + 1) as usize][(dx + 1) as usize] = dot / (qn * norm2.sqrt());
        }
    }
    let gx = (s[1][2] - s[1][0]) * 0.5;
    let gy = (s[2][1] - s[0][1]) * 0.5;
    let hxx = s[1][2] + s[1][0] - 2.0 * s[1][1];
    let hyy = s[2][1] + s[0][1] - 2.0 * s[1][1];
    let hxy = (s[2][2] + s[0][0] - s[2][0] - s[0][2]) * 0.25;
    let det = hxx * hyy - hxy * hxy;
    if det <= 1e-18 || hxx >= 0.0 {
        return center;
    }
    let ox = (-hyy * gx + hxy * gy) / det;
    let oy = (hxy * gx - hxx * gy) / det;
    if ox.abs() > 1.0 || oy.abs() > 1.0 {
        return center;
    }
    // A predicted peak above the cosine bound means the quadratic is
    // extrapolating garbage (typical at an exact self-match); keep the
    // integer peak there.
    let predicted = s[1][1] + 0.5 * (gx * ox + gy * oy);
    if predicted > 1.0 + 1e-12 {
        return center;
    }
    Vector2::new(x as f64 + ox, y as f64 + oy)
}

/// Bilinear depth at a continuous pixel; `None` if any of the four
/// neighbors carries the sentinel.
fn sample_depth(depth: &Raster, pixel: &Vector2<f64>) -> Option<f64> {
    let (w, h) = (depth.width, depth.height);
    let (x, y) = (pixel.x, pixel.y);
    if !(0.0..=(w - 1) as f64).contains(&x) || !(0.0..=(h - 1) as f64).contains(&y) {
        return None;
    }
    let x0 = (x.floor() as usize).min(w - 2);
    let y0 = (y.floor() as usize).min(h - 2);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let z00 = depth.get(x0, y0, 0);
    let z10 = depth.get(x0 + 1, y0, 0);
    let z01 = depth.get(x0, y0 + 1, 0);
    let z11 = depth.get(x0 + 1, y0 + 1, 0);
    if z00 <= 0.0 || z10 <= 0.0 || z01 <= 0.0 || z11 <= 0.0 {
        return None;
    }
    Some(
        (z00 * (1.0 - fx) + z10 * fx) * (1.0 - fy) + (z01 * (1.0 - fx) + z11 * fx) * fy,
    )
}

/// Pipeline variants: matching only, plus warp refinement, plus feature
/// refinement before the warp stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Coarse,
    Base,
    Fine,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "coarse" => Ok(Variant::Coarse),
            "base" => Ok(Variant::Base),
            "fine" => Ok(Variant::Fine),
            other => Err(format!("unknown variant `{other}`, expected coarse|base|fine")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Coarse => "coarse",
            Variant::Base => "base",
            Variant::Fine => "fine",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalizeConfig {
    pub coarse: CoarseConfig,
    pub refine: RefineConfig,
}

#[derive(Debug, Clone)]
pub struct LocalizeOutcome {
    pub pose: Pose,
    pub variant: Variant,
    pub coarse: CoarseOutcome,
    pub feature: Option<FeatureRefineOutcome>,
    pub warp: Option<WarpRefineOutcome>,
}

/// End-to-end localization of one query image.
pub fn localize(
    query: &Raster,
    scene: &Scene,
    k: &CameraIntrinsics,
    provider: &dyn DescriptorProvider,
    config: &LocalizeConfig,
    variant: Variant,
) -> Result<LocalizeOutcome, RefineError> {
    let coarse = localize_coarse(query, scene, k, provider, &config.coarse)?;
    let mut pose = coarse.pose;

    let feature = if variant == Variant::Fine {
        let out = refine_feature(
            query,
            scene,
            &pose,
            k,
            provider,
            config.refine.feature_rounds,
            &config.refine,
        )?;
        pose = out.pose;
        Some(out)
    } else {
        None
    };

    let warp = if variant != Variant::Coarse {
        let out = refine_warp(query, scene, &pose, k, &config.refine)?;
        pose = out.pose;
        Some(out)
    } else {
        None
    };

    Ok(LocalizeOutcome {
        pose,
        variant,
        coarse,
        feature,
        warp,
    })
}

/// Writes a warp-loss trace as `iteration,loss`.
pub fn write_trace_csv(path: &std::path::Path, trace: &[WarpTracePoint]) -> std::io::Result<()> {
    let mut out = String::from("iteration,loss\n");
    for t in trace {
        out.push_str(&format!("{},{}\n", t.iteration, t.loss));
    }
    std::fs::write(path, out)
}
