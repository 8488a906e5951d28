//! Photometric warp loss: pixels of a one-time render are lifted to world
//! space through the rendered depth and the render pose, re-projected under
//! the optimized pose, and compared against the query image sampled there.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::geometry::{backproject, inverse, rotmat_partials, CameraIntrinsics, Pose};
use crate::raster::Raster;

/// Bilinear interpolation of an RGB raster at a continuous pixel position.
/// Returns `None` outside `[0, W-1] x [0, H-1]` (an invalid sample, not a
/// fault).
pub fn bilinear_sample(image: &Raster, pixel: &Vector2<f64>) -> Option<Vector3<f64>> {
    bilinear_with_grad(image, pixel).map(|(c, _, _)| c)
}

/// Bilinear sample plus the spatial derivatives of the interpolated color
/// with respect to the pixel coordinate.
pub fn bilinear_with_grad(
    image: &Raster,
    pixel: &Vector2<f64>,
) -> Option<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
    debug_assert_eq!(image.channels, 3);
    let (w, h) = (image.width, image.height);
    let (x, y) = (pixel.x, pixel.y);
    if !(0.0..=(w - 1) as f64).contains(&x) || !(0.0..=(h - 1) as f64).contains(&y) {
        return None;
    }
    let x0 = (x.floor() as usize).min(w - 2);
    let y0 = (y.floor() as usize).min(h - 2);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let c00 = image.pixel(x0, y0);
    let c10 = image.pixel(x0 + 1, y0);
    let c01 = image.pixel(x0, y0 + 1);
    let c11 = image.pixel(x0 + 1, y0 + 1);
    let mut color = Vector3::zeros();
    let mut dx = Vector3::zeros();
    let mut dy = Vector3::zeros();
    for c in 0..3 {
        let top = c00[c] * (1.0 - fx) + c10[c] * fx;
        let bot = c01[c] * (1.0 - fx) + c11[c] * fx;
        color[c] = top * (1.0 - fy) + bot * fy;
        dx[c] = (c10[c] - c00[c]) * (1.0 - fy) + (c11[c] - c01[c]) * fy;
        dy[c] = bot - top;
    }
    Some((color, dx, dy))
}

/// Warps a render-image pixel with known rendered depth into the optimized
/// camera: back-project under the render pose, re-project under `opt_pose`.
/// `None` when the depth is invalid or the point lands behind the camera.
pub fn warp(
    pixel: &Vector2<f64>,
    render_pose: &Pose,
    opt_pose: &Pose,
    depth: f64,
    k: &CameraIntrinsics,
) -> Option<Vector2<f64>> {
    if depth <= 0.0 {
        return None;
    }
    let p_cam = backproject(pixel, depth, k).ok()?;
    let p_world = inverse(render_pose).transform(&p_cam);
    let p_opt = opt_pose.transform(&p_world);
    k.project_camera_point(&p_opt).ok().map(|(px, _)| px)
}

/// One warped pixel for debugging/overlays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpSample {
    pub source: Vector2<f64>,
    pub warped: Vector2<f64>,
    pub valid: bool,
}

struct FieldSample {
    x: u32,
    y: u32,
    world: Vector3<f64>,
    render_color: Vector3<f64>,
}

/// Precomputed warp data for one refinement run: world points lifted from
/// the rendered depth (fixed), paired with the render's colors.
pub struct WarpField {
    samples: Vec<FieldSample>,
    pub width: usize,
    pub height: usize,
}

pub struct WarpEval {
    pub loss: f64,
    /// d loss / d (qw, qx, qy, qz, tx, ty, tz).
    pub grad: [f64; 7],
    pub valid_samples: usize,
}

impl WarpField {
    /// Collects every `stride`-th pixel with valid rendered depth.
    pub fn build(
        rendered_rgb: &Raster,
        rendered_depth: &Raster,
        render_pose: &Pose,
        k: &CameraIntrinsics,
        stride: usize,
    ) -> WarpField {
        let stride = stride.max(1);
        let render_inv = inverse(render_pose);
        let mut samples = Vec::new();
        for y in (0..rendered_depth.height).step_by(stride) {
            for x in (0..rendered_depth.width).step_by(stride) {
                let z = rendered_depth.get(x, y, 0);
                if z <= 0.0 {
                    continue;
                }
                let pixel = Vector2::new(x as f64, y as f64);
                let Ok(p_cam) = backproject(&pixel, z, k) else {
                    continue;
                };
                let px = rendered_rgb.pixel(x, y);
                samples.push(FieldSample {
                    x: x as u32,
                    y: y as u32,
                    world: render_inv.transform(&p_cam),
                    render_color: Vector3::new(px[0], px[1], px[2]),
                });
            }
        }
        WarpField {
            samples,
            width: rendered_depth.width,
            height: rendered_depth.height,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Warp of every field sample under `opt_pose`, with validity.
    pub fn warp_all(&self, opt_pose: &Pose, k: &CameraIntrinsics) -> Vec<WarpSample> {
        self.samples
            .iter()
            .map(|s| {
                let p_opt = opt_pose.transform(&s.world);
                let source = Vector2::new(s.x as f64, s.y as f64);
                match k.project_camera_point(&p_opt) {
                    Ok((px, _)) => WarpSample {
                        source,
                        warped: px,
                        valid: (0.0..=(self.width - 1) as f64).contains(&px.x)
                            && (0.0..=(self.height - 1) as f64).contains(&px.y),
                    },
                    Err(_) => WarpSample {
                        source,
                        warped: Vector2::zeros(),
                        valid: false,
                    },
                }
            })
            .collect()
    }

    /// Mean L2 RGB residual over valid samples.
    pub fn loss(&self, query: &Raster, opt_pose: &Pose, k: &CameraIntrinsics) -> Option<f64> {
        let (sum, count) = self
            .samples
            .iter()
            .filter_map(|s| self.residual_norm(query, opt_pose, k, s))
            .fold((0.0, 0usize), |(a, n), r| (a + r, n + 1));
        (count > 0).then(|| sum / count as f64)
    }

    fn residual_norm(
        &self,
        query: &Raster,
        opt_pose: &Pose,
        k: &CameraIntrinsics,
        s: &FieldSample,
    ) -> Option<f64> {
        let p_opt = opt_pose.transform(&s.world);
        let (px, _) = k.project_camera_point(&p_opt).ok()?;
        let color = bilinear_sample(query, &px)?;
        Some((color - s.render_color).norm())
    }

    /// Loss and its analytic gradient with respect to the seven pose
    /// parameters. The validity mask is treated as fixed: samples that fall
    /// outside contribute neither loss nor gradient.
    pub fn loss_and_grad(
        &self,
        query: &Raster,
        opt_pose: &Pose,
        k: &CameraIntrinsics,
    ) -> WarpEval {
        let parts = rotmat_partials(&opt_pose.rotation);
        const CHUNK: usize = 2048;
        let partials: Vec<(f64, [f64; 7], usize)> = self
            .samples
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut loss = 0.0;
                let mut grad = [0.0f64; 7];
                let mut count = 0usize;
                for s in chunk {
                    let p_opt = opt_pose.transform(&s.world);
                    let Ok((px, _)) = k.project_camera_point(&p_opt) else {
                        continue;
                    };
                    let Some((color, dx, dy)) = bilinear_with_grad(query, &px) else {
                        continue;
                    };
                    let r = color - s.render_color;
                    let norm = r.norm();
                    count += 1;
                    loss += norm;
                    if norm < 1e-12 {
                        continue;
                    }
                    let rn = r / norm;
                    // d norm / d warped pixel.
                    let a = Vector2::new(rn.dot(&dx), rn.dot(&dy));
                    // d warped pixel / d camera point.
                    let jp = k.projection_jacobian(&p_opt);
                    let b = jp.transpose() * a;
                    for (qi, dr) in parts.iter().enumerate() {
                        grad[qi] += b.dot(&(dr * s.world));
                    }
                    grad[4] += b.x;
                    grad[5] += b.y;
                    grad[6] += b.z;
                }
                (loss, grad, count)
            })
            .collect();

        let mut loss = 0.0;
        let mut grad = [0.0f64; 7];
        let mut count = 0usize;
        for (l, g, c) in partials {
            loss += l;
            for i in 0..7 {
                grad[i] += g[i];
            }
            count += c;
        }
        if count > 0 {
            let inv = 1.0 / count as f64;
            loss *= inv;
            for g in grad.iter_mut() {
                *g *= inv;
            }
        }
        WarpEval {
            loss,
            grad,
            valid_samples: count,
        }
    }
}
