//! Forward rasterization of a Gaussian scene into RGB, feature, depth and
//! alpha maps by front-to-back alpha compositing.
//!
//! Splats are projected with the EWA approximation (perspective Jacobian at
//! the center), globally sorted by mean depth, binned into screen tiles and
//! composited per pixel. The same traversal backs `render`,
//! `compositing_weights` and the trainer's backward pass, so their outputs
//! agree bit-for-bit.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose, Quat};
use crate::raster::Raster;

/// Value written into the depth map where accumulated alpha is below
/// [`ALPHA_MIN_DEPTH`]. Valid depths are always positive.
pub const DEPTH_SENTINEL: f64 = -1.0;

/// Minimum accumulated alpha for a pixel's composited depth to be valid.
pub const ALPHA_MIN_DEPTH: f64 = 0.5;

/// Diagonal floor (px^2) added to projected covariances.
pub const COV_FLOOR: f64 = 0.3;

/// Splats with opacity below this never rasterize.
pub const OPACITY_CULL: f64 = 1.0 / 255.0;

/// Mahalanobis cutoff: splat footprints are truncated at 3 sigma.
const MAHAL_CUTOFF: f64 = 9.0;

const TILE: usize = 32;
const ROWS_PER_BAND: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("gaussian {index}: feature length {got} != scene feature dim {expected}")]
    FeatureDimMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("gaussian {index}: scale components must be positive, got {scale:?}")]
    NonPositiveScale { index: usize, scale: [f64; 3] },
}

/// One splat: position, orientation, per-axis scale, opacity, color and a
/// V-dimensional descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    pub rotation: Quat,
    /// Per-axis standard deviations (meters), all positive.
    pub scale: Vector3<f64>,
    /// Opacity in [0, 1].
    pub opacity: f64,
    /// Linear RGB in [0, 1].
    pub color: Vector3<f64>,
    pub feature: Vec<f64>,
}

impl Gaussian {
    /// Builds a splat, clamping opacity and color into [0, 1].
    pub fn new(
        position: Vector3<f64>,
        rotation: Quat,
        scale: Vector3<f64>,
        opacity: f64,
        color: Vector3<f64>,
        feature: Vec<f64>,
    ) -> Self {
        Gaussian {
            position,
            rotation,
            scale,
            opacity: opacity.clamp(0.0, 1.0),
            color: color.map(|c| c.clamp(0.0, 1.0)),
            feature,
        }
    }

    /// 3D covariance `R S S^T R^T` with `S = diag(scale)`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix();
        let s = Matrix3::from_diagonal(&self.scale);
        let rs = r * s;
        rs * rs.transpose()
    }
}

/// Ordered collection of Gaussians with a fixed descriptor dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
    pub feature_dim: usize,
    pub background: Vector3<f64>,
}

impl Scene {
    pub fn new(
        gaussians: Vec<Gaussian>,
        feature_dim: usize,
        background: Vector3<f64>,
    ) -> Result<Self, SceneError> {
        let scene = Scene {
            gaussians,
            feature_dim,
            background,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (index, g) in self.gaussians.iter().enumerate() {
            if g.feature.len() != self.feature_dim {
                return Err(SceneError::FeatureDimMismatch {
                    index,
                    expected: self.feature_dim,
                    got: g.feature.len(),
                });
            }
            if g.scale.iter().any(|&s| s <= 0.0) {
                return Err(SceneError::NonPositiveScale {
                    index,
                    scale: [g.scale.x, g.scale.y, g.scale.z],
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Length of the bounding-box diagonal of the splat centers.
    pub fn diameter(&self) -> f64 {
        if self.gaussians.is_empty() {
            return 0.0;
        }
        let mut lo = self.gaussians[0].position;
        let mut hi = lo;
        for g in &self.gaussians {
            lo = lo.inf(&g.position);
            hi = hi.sup(&g.position);
        }
        (hi - lo).norm()
    }
}

/// Which maps `render` should produce; alpha is always computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderChannels {
    pub rgb: bool,
    pub features: bool,
    pub depth: bool,
}

impl RenderChannels {
    pub fn all() -> Self {
        RenderChannels {
            rgb: true,
            features: true,
            depth: true,
        }
    }

    pub fn rgb_only() -> Self {
        RenderChannels {
            rgb: true,
            features: false,
            depth: false,
        }
    }

    pub fn rgb_depth() -> Self {
        RenderChannels {
            rgb: true,
            features: false,
            depth: true,
        }
    }

    pub fn features_depth() -> Self {
        RenderChannels {
            rgb: false,
            features: true,
            depth: true,
        }
    }
}

/// Maps produced by [`render`]. Channels that were not requested are `None`.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub feature_dim: usize,
    /// H*W*3, composited over the scene background.
    pub rgb: Option<Raster>,
    /// H*W*V, no background term.
    pub features: Option<Raster>,
    /// H*W, alpha-normalized mean depth or [`DEPTH_SENTINEL`].
    pub depth: Option<Raster>,
    /// H*W accumulated opacity in [0, 1].
    pub alpha: Raster,
}

/// A Gaussian projected into the image plane: pixel-space center, 2x2
/// covariance (with the diagonal floor applied) and mean depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatProjection {
    pub center: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub depth: f64,
}

/// EWA projection of one Gaussian. Returns `None` when the center is behind
/// the camera (the splat is culled, not an error).
pub fn project_gaussian(
    g: &Gaussian,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Option<SplatProjection> {
    let p_cam = pose.transform(&g.position);
    let (center, depth) = k.project_camera_point(&p_cam).ok()?;
    let w = pose.rotation_matrix();
    let j = k.projection_jacobian(&p_cam);
    let jw = j * w;
    let mut cov = jw * g.covariance() * jw.transpose();
    cov[(0, 0)] += COV_FLOOR;
    cov[(1, 1)] += COV_FLOOR;
    Some(SplatProjection { center, cov, depth })
}

/// A projected splat prepared for rasterization.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    /// Index into the scene's gaussian list.
    pub index: usize,
    pub center: Vector2<f64>,
    /// Inverse image covariance [[a, b], [b, c]].
    pub inv_a: f64,
    pub inv_b: f64,
    pub inv_c: f64,
    pub depth: f64,
    pub opacity: f64,
    /// Inclusive pixel bounds of the 3-sigma footprint.
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl Prepared {
    /// Gaussian falloff exp(-m/2) at an integer pixel, or `None` outside the
    /// 3-sigma footprint.
    #[inline]
    pub fn falloff(&self, px: f64, py: f64) -> Option<f64> {
        let dx = px - self.center.x;
        let dy = py - self.center.y;
        let m = dx * (self.inv_a * dx + self.inv_b * dy) + dy * (self.inv_b * dx + self.inv_c * dy);
        if m > MAHAL_CUTOFF {
            return None;
        }
        Some((-0.5 * m).exp())
    }
}

/// Projected, culled, depth-sorted splats with per-tile index lists. The
/// traversal order is deterministic: depth ties break by scene index.
pub(crate) struct RasterGrid {
    pub prepared: Vec<Prepared>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    pub width: usize,
    pub height: usize,
}

impl RasterGrid {
    pub fn build(scene: &Scene, pose: &Pose, k: &CameraIntrinsics) -> Self {
        let (width, height) = (k.width, k.height);
        let mut prepared: Vec<Prepared> = Vec::with_capacity(scene.len());
        for (index, g) in scene.gaussians.iter().enumerate() {
            if g.opacity < OPACITY_CULL {
                continue;
            }
            let Some(proj) = project_gaussian(g, pose, k) else {
                continue;
            };
            let det = proj.cov[(0, 0)] * proj.cov[(1, 1)] - proj.cov[(0, 1)] * proj.cov[(0, 1)];
            if det <= 0.0 {
                continue;
            }
            let inv_det = 1.0 / det;
            let rx = 3.0 * proj.cov[(0, 0)].sqrt();
            let ry = 3.0 * proj.cov[(1, 1)].sqrt();
            let x_lo = proj.center.x - rx;
            let x_hi = proj.center.x + rx;
            let y_lo = proj.center.y - ry;
            let y_hi = proj.center.y + ry;
            if x_hi < 0.0 || y_hi < 0.0 || x_lo > (width - 1) as f64 || y_lo > (height - 1) as f64 {
                continue;
            }
            prepared.push(Prepared {
                index,
                center: proj.center,
                inv_a: proj.cov[(1, 1)] * inv_det,
                inv_b: -proj.cov[(0, 1)] * inv_det,
                inv_c: proj.cov[(0, 0)] * inv_det,
                depth: proj.depth,
                opacity: g.opacity,
                x0: x_lo.ceil().max(0.0) as usize,
                x1: (x_hi.floor() as usize).min(width - 1),
                y0: y_lo.ceil().max(0.0) as usize,
                y1: (y_hi.floor() as usize).min(height - 1),
            });
        }
        prepared.sort_unstable_by(|a, b| {
            a.depth
                .total_cmp(&b.depth)
                .then_with(|| a.index.cmp(&b.index))
        });

        let tiles_x = width.div_ceil(TILE);
        let tiles_y = height.div_ceil(TILE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (pi, p) in prepared.iter().enumerate() {
            for ty in p.y0 / TILE..=p.y1 / TILE {
                for tx in p.x0 / TILE..=p.x1 / TILE {
                    tiles[ty * tiles_x + tx].push(pi as u32);
                }
            }
        }
        RasterGrid {
            prepared,
            tiles,
            tiles_x,
            width,
            height,
        }
    }

    /// Calls `f(splat, falloff)` for every splat covering pixel (x, y),
    /// front to back.
    #[inline]
    pub fn visit_pixel<F: FnMut(&Prepared, f64)>(&self, x: usize, y: usize, mut f: F) {
        let tile = &self.tiles[(y / TILE) * self.tiles_x + x / TILE];
        let (px, py) = (x as f64, y as f64);
        for &pi in tile {
            let p = &self.prepared[pi as usize];
            if x < p.x0 || x > p.x1 || y < p.y0 || y > p.y1 {
                continue;
            }
            if let Some(g) = p.falloff(px, py) {
                f(p, g);
            }
        }
    }
}

struct Band<'a> {
    y0: usize,
    rgb: Option<&'a mut [f64]>,
    features: Option<&'a mut [f64]>,
    depth: Option<&'a mut [f64]>,
    alpha: &'a mut [f64],
}

/// Renders the scene from `pose`. Per pixel, splats are composited front to
/// back: weight `w_i = alpha_i * G_i * T_i` with transmittance
/// `T_i = prod_{j<i} (1 - alpha_j G_j)`. RGB is composited over the scene
/// background with the leftover weight; features carry no background term;
/// depth is the alpha-normalized mean where accumulated alpha reaches
/// [`ALPHA_MIN_DEPTH`] and [`DEPTH_SENTINEL`] elsewhere.
pub fn render(
    scene: &Scene,
    pose: &Pose,
    k: &CameraIntrinsics,
    channels: RenderChannels,
) -> RenderOutput {
    let grid = RasterGrid::build(scene, pose, k);
    render_with_grid(&grid, scene, channels)
}

/// Forward pass over an already-built grid; lets the trainer share the
/// projection/sort/bin work between its forward and backward passes.
pub(crate) fn render_with_grid(
    grid: &RasterGrid,
    scene: &Scene,
    channels: RenderChannels,
) -> RenderOutput {
    let (w, h) = (grid.width, grid.height);
    let v = scene.feature_dim;

    let mut rgb = channels.rgb.then(|| vec![0.0; w * h * 3]);
    let mut features = channels.features.then(|| vec![0.0; w * h * v]);
    let mut depth = channels.depth.then(|| vec![0.0; w * h]);
    let mut alpha = vec![0.0; w * h];

    let bands = make_bands(
        h,
        w,
        v,
        rgb.as_deref_mut(),
        features.as_deref_mut(),
        depth.as_deref_mut(),
        &mut alpha,
    );
    bands.into_par_iter().for_each(|mut band| {
        let rows = band.alpha.len() / w;
        let mut feat_acc = vec![0.0; v];
        for ry in 0..rows {
            let y = band.y0 + ry;
            for x in 0..w {
                let mut t = 1.0;
                let mut acc_rgb = Vector3::zeros();
                feat_acc.fill(0.0);
                let mut acc_depth = 0.0;
                let mut acc_alpha = 0.0;
                grid.visit_pixel(x, y, |p, g| {
                    let alpha_hat = p.opacity * g;
                    let weight = alpha_hat * t;
                    if band.rgb.is_some() {
                        acc_rgb += scene.gaussians[p.index].color * weight;
                    }
                    if band.features.is_some() {
                        let f = &scene.gaussians[p.index].feature;
                        for (a, fv) in feat_acc.iter_mut().zip(f) {
                            *a += fv * weight;
                        }
                    }
                    if band.depth.is_some() {
                        acc_depth += p.depth * weight;
                    }
                    acc_alpha += weight;
                    t *= 1.0 - alpha_hat;
                });
                let i = ry * w + x;
                if let Some(rgb) = band.rgb.as_deref_mut() {
                    let out = acc_rgb + scene.background * (1.0 - acc_alpha);
                    rgb[i * 3] = out.x;
                    rgb[i * 3 + 1] = out.y;
                    rgb[i * 3 + 2] = out.z;
                }
                if let Some(features) = band.features.as_deref_mut() {
                    features[i * v..(i + 1) * v].copy_from_slice(&feat_acc);
                }
                if let Some(depth) = band.depth.as_deref_mut() {
                    depth[i] = if acc_alpha >= ALPHA_MIN_DEPTH {
                        acc_depth / acc_alpha
                    } else {
                        DEPTH_SENTINEL
                    };
                }
                band.alpha[i] = acc_alpha;
            }
        }
    });

    RenderOutput {
        width: w,
        height: h,
        feature_dim: v,
        rgb: rgb.map(|d| Raster::from_data(w, h, 3, d).expect("sized above")),
        features: features.map(|d| Raster::from_data(w, h, v, d).expect("sized above")),
        depth: depth.map(|d| Raster::from_data(w, h, 1, d).expect("sized above")),
        alpha: Raster::from_data(w, h, 1, alpha).expect("sized above"),
    }
}

#[allow(clippy::too_many_arguments)]
fn make_bands<'a>(
    h: usize,
    w: usize,
    v: usize,
    mut rgb: Option<&'a mut [f64]>,
    mut features: Option<&'a mut [f64]>,
    mut depth: Option<&'a mut [f64]>,
    alpha: &'a mut [f64],
) -> Vec<Band<'a>> {
    let mut bands = Vec::with_capacity(h.div_ceil(ROWS_PER_BAND));
    let mut alpha_rest = alpha;
    let mut y0 = 0;
    while y0 < h {
        let rows = ROWS_PER_BAND.min(h - y0);
        let take = |opt: &mut Option<&'a mut [f64]>, per_row: usize| -> Option<&'a mut [f64]> {
            opt.take().map(|s| {
                let (head, tail) = s.split_at_mut(rows * per_row);
                *opt = Some(tail);
                head
            })
        };
        let (alpha_head, alpha_tail) = alpha_rest.split_at_mut(rows * w);
        alpha_rest = alpha_tail;
        bands.push(Band {
            y0,
            rgb: take(&mut rgb, w * 3),
            features: take(&mut features, w * v),
            depth: take(&mut depth, w),
            alpha: alpha_head,
        });
        y0 += rows;
    }
    bands
}

/// Per-Gaussian compositing weights `w_i = alpha_i G_i T_i` at one pixel,
/// front to back, keyed by scene index. Reconstructing the pixel color from
/// these weights reproduces `render` exactly.
pub fn compositing_weights(
    scene: &Scene,
    pose: &Pose,
    k: &CameraIntrinsics,
    pixel: (usize, usize),
) -> Vec<(usize, f64)> {
    let grid = RasterGrid::build(scene, pose, k);
    let mut out = Vec::new();
    let mut t = 1.0;
    grid.visit_pixel(pixel.0, pixel.1, |p, g| {
        let alpha_hat = p.opacity * g;
        out.push((p.index, alpha_hat * t));
        t *= 1.0 - alpha_hat;
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn k_small() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 32.0, 32.0, 64, 64).unwrap()
    }

    fn splat(
        pos: Vector3<f64>,
        scale: f64,
        opacity: f64,
        color: Vector3<f64>,
        feature: Vec<f64>,
    ) -> Gaussian {
        Gaussian::new(
            pos,
            Quat::IDENTITY,
            Vector3::new(scale, scale, scale),
            opacity,
            color,
            feature,
        )
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize, v: usize) -> Scene {
        let gaussians = (0..n)
            .map(|_| {
                let q = Quat::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let q = q.normalize().unwrap_or(Quat::IDENTITY);
                Gaussian::new(
                    Vector3::new(
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(1.0..3.0),
                    ),
                    q,
                    Vector3::new(
                        rng.gen_range(0.01..0.08),
                        rng.gen_range(0.01..0.08),
                        rng.gen_range(0.01..0.08),
                    ),
                    rng.gen_range(0.1..0.95),
                    Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                    (0..v).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        Scene::new(gaussians, v, Vector3::new(0.1, 0.2, 0.3)).unwrap()
    }

    #[test]
    fn scene_rejects_feature_dim_mismatch() {
        let g = splat(
            Vector3::new(0.0, 0.0, 1.0),
            0.1,
            0.5,
            Vector3::new(1.0, 0.0, 0.0),
            vec![0.0; 3],
        );
        assert!(matches!(
            Scene::new(vec![g], 4, Vector3::zeros()),
            Err(SceneError::FeatureDimMismatch { .. })
        ));
    }

    #[test]
    fn isotropic_axis_aligned_covariance() {
        // Isotropic splat on the optical axis: cov = diag((fx*s/z)^2, (fy*s/z)^2) + floor.
        let k = k_small();
        let (sigma, z) = (0.05, 2.0);
        let g = splat(
            Vector3::new(0.0, 0.0, z),
            sigma,
            0.9,
            Vector3::new(1.0, 1.0, 1.0),
            vec![],
        );
        let proj = project_gaussian(&g, &Pose::IDENTITY, &k).unwrap();
        let expected = (k.fx * sigma / z).powi(2);
        assert_abs_diff_eq!(proj.cov[(0, 0)], expected + COV_FLOOR, epsilon = 1e-9);
        assert_abs_diff_eq!(proj.cov[(1, 1)], expected + COV_FLOOR, epsilon = 1e-9);
        assert_abs_diff_eq!(proj.cov[(0, 1)], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(proj.depth, z);
    }

    #[test]
    fn covariance_eigenvalues_at_least_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scene = random_scene(&mut rng, 20, 0);
        for g in &scene.gaussians {
            let proj = project_gaussian(g, &Pose::IDENTITY, &k_small()).unwrap();
            let eig = proj.cov.symmetric_eigenvalues();
            assert!(eig.min() >= COV_FLOOR - 1e-12);
        }
    }

    #[test]
    fn behind_camera_gaussian_is_culled() {
        let g = splat(
            Vector3::new(0.0, 0.0, -1.0),
            0.1,
            0.9,
            Vector3::new(1.0, 1.0, 1.0),
            vec![],
        );
        assert!(project_gaussian(&g, &Pose::IDENTITY, &k_small()).is_none());
    }

    #[test]
    fn projected_covariance_matches_monte_carlo() {
        // Empirical covariance of projected samples from the 3D Gaussian.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = CameraIntrinsics::new(400.0, 400.0, 160.0, 120.0, 320, 240).unwrap();
        for trial in 0..5 {
            let q = Quat::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize()
            .unwrap();
            let g = Gaussian::new(
                Vector3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), 4.0),
                q,
                Vector3::new(
                    rng.gen_range(0.03..0.08),
                    rng.gen_range(0.03..0.08),
                    rng.gen_range(0.03..0.08),
                ),
                0.9,
                Vector3::new(1.0, 1.0, 1.0),
                vec![],
            );
            let proj = project_gaussian(&g, &Pose::IDENTITY, &k).unwrap();

            let r = g.rotation.to_rotation_matrix();
            let n = 400_000;
            let mut mean = Vector2::zeros();
            let mut pts = Vec::with_capacity(n);
            for _ in 0..n {
                let noise = Vector3::new(
                    sample_gauss(&mut rng),
                    sample_gauss(&mut rng),
                    sample_gauss(&mut rng),
                );
                let p = g.position + r * noise.component_mul(&g.scale);
                let (px, _) = k.project_camera_point(&p).unwrap();
                mean += px;
                pts.push(px);
            }
            mean /= n as f64;
            let mut cov = Matrix2::zeros();
            for p in &pts {
                let d = p - mean;
                cov += d * d.transpose();
            }
            cov /= n as f64;

            let analytic = proj.cov - Matrix2::identity() * COV_FLOOR;
            let rel = (cov - analytic).norm() / analytic.norm();
            assert!(
                rel < 0.05,
                "trial {trial}: MC covariance off by {:.3}%",
                rel * 100.0
            );
        }
    }

    fn sample_gauss(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller; good enough for test sampling.
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn empty_scene_renders_background() {
        let scene = Scene::new(vec![], 4, Vector3::new(0.2, 0.4, 0.6)).unwrap();
        let out = render(&scene, &Pose::IDENTITY, &k_small(), RenderChannels::all());
        let rgb = out.rgb.unwrap();
        let depth = out.depth.unwrap();
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(rgb.pixel(x, y), &[0.2, 0.4, 0.6]);
                assert_eq!(depth.get(x, y, 0), DEPTH_SENTINEL);
                assert_eq!(out.alpha.get(x, y, 0), 0.0);
            }
        }
    }

    #[test]
    fn single_opaque_splat_sets_center_pixel() {
        let color = Vector3::new(0.9, 0.1, 0.4);
        let g = splat(Vector3::new(0.0, 0.0, 2.0), 0.05, 1.0, color, vec![1.0, 2.0]);
        let scene = Scene::new(vec![g], 2, Vector3::zeros()).unwrap();
        let out = render(&scene, &Pose::IDENTITY, &k_small(), RenderChannels::all());
        let rgb = out.rgb.unwrap();
        // Splat center projects exactly onto pixel (32, 32).
        assert_abs_diff_eq!(rgb.get(32, 32, 0), color.x, epsilon = 1e-12);
        assert_abs_diff_eq!(rgb.get(32, 32, 1), color.y, epsilon = 1e-12);
        assert_abs_diff_eq!(out.depth.unwrap().get(32, 32, 0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.alpha.get(32, 32, 0), 1.0, epsilon = 1e-12);
        let f = out.features.unwrap();
        assert_abs_diff_eq!(f.get(32, 32, 0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.get(32, 32, 1), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn two_coincident_splats_composite_front_to_back() {
        // Both centers on pixel (32,32); alpha-hat = 0.5 each at the center.
        let c1 = Vector3::new(1.0, 0.0, 0.0);
        let c2 = Vector3::new(0.0, 1.0, 0.0);
        let g1 = splat(Vector3::new(0.0, 0.0, 1.0), 0.05, 0.5, c1, vec![]);
        let g2 = splat(Vector3::new(0.0, 0.0, 2.0), 0.05, 0.5, c2, vec![]);
        let scene = Scene::new(vec![g2.clone(), g1.clone()], 0, Vector3::zeros()).unwrap();
        let out = render(&scene, &Pose::IDENTITY, &k_small(), RenderChannels::rgb_only());
        let rgb = out.rgb.unwrap();
        // Front contributes 0.5*c1, back 0.5*0.5*c2.
        assert_abs_diff_eq!(rgb.get(32, 32, 0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(rgb.get(32, 32, 1), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(out.alpha.get(32, 32, 0), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn rendering_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scene = random_scene(&mut rng, 30, 4);
        let base = render(&scene, &Pose::IDENTITY, &k_small(), RenderChannels::all());
        let mut shuffled = scene.clone();
        shuffled.gaussians.shuffle(&mut rng);
        let out = render(&shuffled, &Pose::IDENTITY, &k_small(), RenderChannels::all());
        let (a, b) = (base.rgb.unwrap(), out.rgb.unwrap());
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
        for (x, y) in base.alpha.data.iter().zip(&out.alpha.data) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn opaque_front_splat_hides_later_ones() {
        let front = splat(
            Vector3::new(0.0, 0.0, 1.0),
            0.2,
            1.0,
            Vector3::new(1.0, 1.0, 1.0),
            vec![],
        );
        let back = splat(
            Vector3::new(0.0, 0.0, 2.0),
            0.2,
            0.9,
            Vector3::new(0.0, 1.0, 0.0),
            vec![],
        );
        let scene = Scene::new(vec![back, front], 0, Vector3::zeros()).unwrap();
        let weights = compositing_weights(&scene, &Pose::IDENTITY, &k_small(), (32, 32));
        // Opaque front splat at its center: every later weight is exactly zero.
        assert_eq!(weights[0].0, 1);
        assert_abs_diff_eq!(weights[0].1, 1.0, epsilon = 1e-12);
        for &(_, w) in &weights[1..] {
            assert_eq!(w, 0.0);
        }
    }

    #[test]
    fn weights_reconstruct_rendered_color() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scene = random_scene(&mut rng, 40, 2);
        let out = render(&scene, &Pose::IDENTITY, &k_small(), RenderChannels::all());
        let rgb = out.rgb.unwrap();
        for &(x, y) in &[(32usize, 32usize), (20, 40), (0, 0), (63, 63)] {
            let weights = compositing_weights(&scene, &Pose::IDENTITY, &k_small(), (x, y));
            let wsum: f64 = weights.iter().map(|&(_, w)| w).sum();
            assert!(wsum <= 1.0 + 1e-12);
            assert!(weights.iter().all(|&(_, w)| w >= 0.0));
            let mut c = scene.background * (1.0 - wsum);
            for &(i, w) in &weights {
                c += scene.gaussians[i].color * w;
            }
            for ch in 0..3 {
                assert_abs_diff_eq!(rgb.get(x, y, ch), c[ch], epsilon = 1e-9);
            }
            assert_abs_diff_eq!(out.alpha.get(x, y, 0), wsum, epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_scene_weights_are_empty() {
        let scene = Scene::new(vec![], 0, Vector3::zeros()).unwrap();
        assert!(compositing_weights(&scene, &Pose::IDENTITY, &k_small(), (10, 10)).is_empty());
    }

    #[test]
    fn features_share_weights_with_rgb() {
        // Features = color channels => feature map equals RGB minus background term.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut scene = random_scene(&mut rng, 25, 3);
        for g in &mut scene.gaussians {
            g.feature = vec![g.color.x, g.color.y, g.color.z];
        }
        let out = render(&scene, &Pose::IDENTITY, &k_small(), RenderChannels::all());
        let rgb = out.rgb.unwrap();
        let feat = out.features.unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let a = out.alpha.get(x, y, 0);
                for c in 0..3 {
                    let expected = rgb.get(x, y, c) - scene.background[c] * (1.0 - a);
                    assert_abs_diff_eq!(feat.get(x, y, c), expected, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn transmittance_monotone_and_weight_sum_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let scene = random_scene(&mut rng, 50, 0);
        let grid = RasterGrid::build(&scene, &Pose::IDENTITY, &k_small());
        for &(x, y) in &[(32usize, 32usize), (16, 48), (5, 5)] {
            let mut t_prev = 1.0;
            let mut wsum = 0.0;
            grid.visit_pixel(x, y, |p, g| {
                let alpha_hat = p.opacity * g;
                let t = t_prev * (1.0 - alpha_hat);
                assert!(t <= t_prev + 1e-15);
                assert!((0.0..=1.0).contains(&t));
                wsum += alpha_hat * t_prev;
                t_prev = t;
            });
            assert!(wsum <= 1.0 + 1e-12);
        }
    }
}
