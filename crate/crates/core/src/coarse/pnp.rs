//! Perspective-n-Point: a P3P minimal solver (Grunert's distance system,
//! quartic via companion-matrix eigenvalues) disambiguated with the extra
//! points, then a Levenberg-Marquardt reprojection polish over the full set.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{rotmat_partials, rotmat_to_quat, CameraIntrinsics, Pose, Quat, DEPTH_EPS};

#[derive(Debug, Error, PartialEq)]
pub enum PnpError {
    #[error("need at least {min} correspondences, got {got}")]
    InsufficientData { min: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    SolverFailure(String),
}

/// One 2D-3D pair ready for pose estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpPoint {
    pub pixel: Vector2<f64>,
    pub world: Vector3<f64>,
}

pub const MIN_PNP_POINTS: usize = 4;

/// Squared reprojection error of one point; behind-camera points count as
/// infinite.
pub fn reprojection_error_sq(pose: &Pose, k: &CameraIntrinsics, p: &PnpPoint) -> f64 {
    let cam = pose.transform(&p.world);
    if cam.z <= DEPTH_EPS {
        return f64::INFINITY;
    }
    let u = k.fx * cam.x / cam.z + k.cx;
    let v = k.fy * cam.y / cam.z + k.cy;
    let du = u - p.pixel.x;
    let dv = v - p.pixel.y;
    du * du + dv * dv
}

fn total_error(pose: &Pose, k: &CameraIntrinsics, pts: &[PnpPoint]) -> f64 {
    pts.iter()
        .map(|p| {
            let e = reprojection_error_sq(pose, k, p);
            if e.is_finite() {
                e
            } else {
                1e12
            }
        })
        .sum()
}

fn bearing(k: &CameraIntrinsics, pixel: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0).normalize()
}

/// Real roots of a quartic via the eigenvalues of its companion matrix.
fn quartic_roots(c4: f64, c3: f64, c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    if c4.abs() < 1e-14 {
        // Falls back to a cubic companion matrix.
        if c3.abs() < 1e-14 {
            if c2.abs() < 1e-14 {
                if c1.abs() < 1e-14 {
                    return Vec::new();
                }
                return vec![-c0 / c1];
            }
            let disc = c1 * c1 - 4.0 * c2 * c0;
            if disc < 0.0 {
                return Vec::new();
            }
            let s = disc.sqrt();
            return vec![(-c1 + s) / (2.0 * c2), (-c1 - s) / (2.0 * c2)];
        }
        let mut m = DMatrix::<f64>::zeros(3, 3);
        m[(0, 0)] = -c2 / c3;
        m[(0, 1)] = -c1 / c3;
        m[(0, 2)] = -c0 / c3;
        m[(1, 0)] = 1.0;
        m[(2, 1)] = 1.0;
        return real_eigs(m);
    }
    let mut m = DMatrix::<f64>::zeros(4, 4);
    m[(0, 0)] = -c3 / c4;
    m[(0, 1)] = -c2 / c4;
    m[(0, 2)] = -c1 / c4;
    m[(0, 3)] = -c0 / c4;
    m[(1, 0)] = 1.0;
    m[(2, 1)] = 1.0;
    m[(3, 2)] = 1.0;
    real_eigs(m)
}

fn real_eigs(m: DMatrix<f64>) -> Vec<f64> {
    let mut roots: Vec<f64> = m
        .complex_eigenvalues()
        .iter()
        .filter(|e| e.im.abs() < 1e-8)
        .map(|e| e.re)
        .collect();
    roots.sort_by(|a, b| a.total_cmp(b));
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-10);
    roots
}

/// Rigid alignment (Kabsch) mapping world points onto camera points.
fn align_points(world: &[Vector3<f64>], camera: &[Vector3<f64>]) -> Option<Pose> {
    let n = world.len() as f64;
    let cw = world.iter().sum::<Vector3<f64>>() / n;
    let cc = camera.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (pw, pc) in world.iter().zip(camera) {
        h += (pc - cc) * (pw - cw).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fix = u;
        u_fix.column_mut(2).neg_mut();
        r = u_fix * v_t;
    }
    let t = cc - r * cw;
    Some(Pose::new(rotmat_to_quat(&r), t))
}

/// P3P minimal solver: up to four world-to-camera pose candidates from three
/// non-collinear points.
pub fn p3p(points: &[PnpPoint; 3], k: &CameraIntrinsics) -> Vec<Pose> {
    let f: Vec<Vector3<f64>> = points.iter().map(|p| bearing(k, &p.pixel)).collect();
    let w: Vec<Vector3<f64>> = points.iter().map(|p| p.world).collect();

    let a = (w[1] - w[2]).norm();
    let b = (w[0] - w[2]).norm();
    let c = (w[0] - w[1]).norm();
    if a < 1e-12 || b < 1e-12 || c < 1e-12 {
        return Vec::new();
    }

    let cos_alpha = f[1].dot(&f[2]);
    let cos_beta = f[0].dot(&f[2]);
    let cos_gamma = f[0].dot(&f[1]);

    let c2 = c * c;
    let d = (b * b - a * a) / c2;
    let e = (b * b) / c2;

    // v = n(u) / den(u); substituting back yields a quartic in u = s2/s1.
    let n_poly = [1.0 - d, 2.0 * d * cos_gamma, -(1.0 + d)];
    let den_poly = [2.0 * cos_beta, -2.0 * cos_alpha];
    let e_poly = [1.0 - e, 2.0 * e * cos_gamma, -e];

    let mut quartic = [0.0f64; 5];
    for i in 0..3 {
        for j in 0..3 {
            quartic[i + j] += n_poly[i] * n_poly[j];
        }
    }
    for i in 0..3 {
        for j in 0..2 {
            quartic[i + j] -= 2.0 * cos_beta * n_poly[i] * den_poly[j];
        }
    }
    let mut den2 = [0.0f64; 3];
    for i in 0..2 {
        for j in 0..2 {
            den2[i + j] += den_poly[i] * den_poly[j];
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            quartic[i + j] += e_poly[i] * den2[j];
        }
    }

    let mut poses = Vec::new();
    for u in quartic_roots(quartic[4], quartic[3], quartic[2], quartic[1], quartic[0]) {
        let den = 2.0 * (cos_beta - u * cos_alpha);
        if den.abs() < 1e-12 {
            continue;
        }
        let v = (n_poly[0] + n_poly[1] * u + n_poly[2] * u * u) / den;
        let kk = 1.0 + u * u - 2.0 * u * cos_gamma;
        if kk <= 1e-12 {
            continue;
        }
        let s1 = (c2 / kk).sqrt();
        let (s2, s3) = (u * s1, v * s1);
        if s1 <= 0.0 || s2 <= 0.0 || s3 <= 0.0 {
            continue;
        }
        let cam = [f[0] * s1, f[1] * s2, f[2] * s3];
        if let Some(pose) = align_points(&w, &cam) {
            poses.push(pose);
        }
    }
    poses
}

fn candidate_triples(n: usize) -> Vec<[usize; 3]> {
    let mut triples = vec![[0, 1, 2]];
    if n > 4 {
        triples.push([0, n / 2, n - 1]);
        triples.push([1, n / 3, 2 * n / 3]);
    }
    if n >= 4 {
        triples.push([0, 1, 3].map(|i| i.min(n - 1)));
        triples.push([1, 2, 3].map(|i| i.min(n - 1)));
    }
    triples.retain(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2]);
    triples.dedup();
    triples
}

/// Minimal 4-point solve used inside RANSAC: P3P on the first three points,
/// disambiguated by the remaining ones, no polish.
pub fn solve_pnp_minimal(points: &[PnpPoint], k: &CameraIntrinsics) -> Result<Pose, PnpError> {
    if points.len() < MIN_PNP_POINTS {
        return Err(PnpError::InsufficientData {
            min: MIN_PNP_POINTS,
            got: points.len(),
        });
    }
    let triple = [points[0], points[1], points[2]];
    let candidates = p3p(&triple, k);
    candidates
        .into_iter()
        .map(|pose| (total_error(&pose, k, points), pose))
        .filter(|(e, _)| e.is_finite())
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, pose)| pose)
        .ok_or_else(|| PnpError::SolverFailure("p3p produced no valid candidate".to_string()))
}

/// Full PnP: best P3P candidate over several deterministic triples, then a
/// Levenberg-Marquardt reprojection polish on all points. All points must
/// end up in front of the camera.
pub fn solve_pnp(points: &[PnpPoint], k: &CameraIntrinsics) -> Result<Pose, PnpError> {
    if points.len() < MIN_PNP_POINTS {
        return Err(PnpError::InsufficientData {
            min: MIN_PNP_POINTS,
            got: points.len(),
        });
    }
    let mut best: Option<(f64, Pose)> = None;
    for t in candidate_triples(points.len()) {
        let triple = [points[t[0]], points[t[1]], points[t[2]]];
        for pose in p3p(&triple, k) {
            let err = total_error(&pose, k, points);
            if err.is_finite() && best.map_or(true, |(e, _)| err < e) {
                best = Some((err, pose));
            }
        }
    }
    let (_, initial) = best
        .ok_or_else(|| PnpError::SolverFailure("no viable minimal solution".to_string()))?;

    let polished = lm_polish(&initial, points, k);
    let behind = points
        .iter()
        .any(|p| polished.transform(&p.world).z <= DEPTH_EPS);
    if behind {
        return Err(PnpError::SolverFailure(
            "points project behind the camera after polish".to_string(),
        ));
    }
    Ok(polished)
}

/// Levenberg-Marquardt over (quaternion, translation) minimizing pixel
/// reprojection error.
fn lm_polish(initial: &Pose, points: &[PnpPoint], k: &CameraIntrinsics) -> Pose {
    let mut q = initial
        .rotation
        .normalize()
        .unwrap_or(Quat::IDENTITY);
    let mut t = initial.translation;
    let mut lambda = 1e-3;
    let mut cost = total_error(&Pose::new(q, t), k, points);

    for _ in 0..40 {
        let pose = Pose::new(q, t);
        let parts = rotmat_partials(&q);
        let mut jtj = SMatrix::<f64, 7, 7>::zeros();
        let mut jtr = SVector::<f64, 7>::zeros();
        for p in points {
            let cam = pose.transform(&p.world);
            if cam.z <= DEPTH_EPS {
                continue;
            }
            let proj = Vector2::new(k.fx * cam.x / cam.z + k.cx, k.fy * cam.y / cam.z + k.cy);
            let r = proj - p.pixel;
            let jp = k.projection_jacobian(&cam);
            // Columns: 4 quaternion components, then translation.
            let mut jrow = SMatrix::<f64, 2, 7>::zeros();
            for (qi, dr) in parts.iter().enumerate() {
                let col = jp * (dr * p.world);
                jrow[(0, qi)] = col.x;
                jrow[(1, qi)] = col.y;
            }
            for ti in 0..3 {
                jrow[(0, 4 + ti)] = jp[(0, ti)];
                jrow[(1, 4 + ti)] = jp[(1, ti)];
            }
            jtj += jrow.transpose() * jrow;
            jtr += jrow.transpose() * r;
        }

        let mut accepted = false;
        for _ in 0..10 {
            let mut damped = jtj;
            for i in 0..7 {
                damped[(i, i)] += lambda * (jtj[(i, i)].max(1e-12));
            }
            let Some(delta) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let q_new = Quat::new(q.w + delta[0], q.x + delta[1], q.y + delta[2], q.z + delta[3]);
            let Ok(q_new) = q_new.normalize() else {
                lambda *= 10.0;
                continue;
            };
            let t_new = t + Vector3::new(delta[4], delta[5], delta[6]);
            let new_cost = total_error(&Pose::new(q_new, t_new), k, points);
            if new_cost < cost {
                q = q_new;
                t = t_new;
                cost = new_cost;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || cost < 1e-24 {
            break;
        }
    }
    Pose::new(q, t)
}
