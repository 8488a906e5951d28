//! SE(3) poses, quaternion algebra and pinhole camera projection.
//!
//! Conventions used across the whole workspace:
//! - Poses map world points to camera points: `p_cam = R * p_world + t`.
//! - Pixel origin is the top-left corner with pixel centers at integer
//!   coordinates, so pixel (0, 0) samples the continuous point (0.0, 0.0).
//! - Rotation errors are reported as the angle of the relative rotation in
//!   degrees; translation errors as the Euclidean distance between camera
//!   centers.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum depth (meters) accepted in front of the camera.
pub const DEPTH_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("quaternion has zero norm")]
    ZeroNormQuaternion,
    #[error("point behind camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("invalid depth {depth}, must be > 0")]
    InvalidDepth { depth: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Rotation quaternion stored as (w, x, y, z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalize(&self) -> Result<Quat, GeometryError> {
        let n = self.norm();
        if n <= f64::EPSILON {
            return Err(GeometryError::ZeroNormQuaternion);
        }
        Ok(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conjugate(&self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product; `R(a * b) = R(a) * R(b)`.
    pub fn mul(&self, o: &Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle_rad: f64) -> Quat {
        let a = axis.normalize();
        let (s, c) = (angle_rad * 0.5).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Rotation angle in radians encoded by this quaternion, in [0, pi].
    pub fn angle(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }

    pub fn rotate(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.to_rotation_matrix() * p
    }

    /// Rotation matrix of the normalized quaternion, `R = M(q) / |q|^2`.
    ///
    /// Scale-invariant by construction: `q` and `s*q` (s != 0) give the same
    /// matrix, which keeps gradients well-defined when a raw 4-vector is
    /// optimized and renormalized between steps.
    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let n2 = self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z;
        homogeneous_rot(self) / n2
    }
}

fn homogeneous_rot(q: &Quat) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    )
}

/// Validated rotation-matrix conversion; errors on a zero-norm quaternion.
pub fn quat_to_rotmat(q: &Quat) -> Result<Matrix3<f64>, GeometryError> {
    let n2 = q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z;
    if n2 <= f64::EPSILON * f64::EPSILON {
        return Err(GeometryError::ZeroNormQuaternion);
    }
    Ok(homogeneous_rot(q) / n2)
}

/// Partial derivatives of `to_rotation_matrix` with respect to the raw
/// quaternion components (w, x, y, z), including the normalization term.
pub fn rotmat_partials(q: &Quat) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let n2 = w * w + x * x + y * y + z * z;
    let r = homogeneous_rot(q) / n2;

    let dm_dw = Matrix3::new(
        2.0 * w,
        -2.0 * z,
        2.0 * y,
        2.0 * z,
        2.0 * w,
        -2.0 * x,
        -2.0 * y,
        2.0 * x,
        2.0 * w,
    );
    let dm_dx = Matrix3::new(
        2.0 * x,
        2.0 * y,
        2.0 * z,
        2.0 * y,
        -2.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * w,
        -2.0 * x,
    );
    let dm_dy = Matrix3::new(
        -2.0 * y,
        2.0 * x,
        2.0 * w,
        2.0 * x,
        2.0 * y,
        2.0 * z,
        -2.0 * w,
        2.0 * z,
        -2.0 * y,
    );
    let dm_dz = Matrix3::new(
        -2.0 * z,
        -2.0 * w,
        2.0 * x,
        2.0 * w,
        -2.0 * z,
        2.0 * y,
        2.0 * x,
        2.0 * y,
        2.0 * z,
    );

    // d(M/n2)/dq_k = dM/dq_k / n2 - (2 q_k / n2) * R
    [
        dm_dw / n2 - r * (2.0 * w / n2),
        dm_dx / n2 - r * (2.0 * x / n2),
        dm_dy / n2 - r * (2.0 * y / n2),
        dm_dz / n2 - r * (2.0 * z / n2),
    ]
}

/// World-to-camera rigid transform: `p_cam = R * p_world + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Quat::IDENTITY,
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Quat, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn transform(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p_world) + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix()
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation)
    }

    /// Looking from `eye` toward `target`; `up` picks the roll. Returns the
    /// world-to-camera pose with the camera +z axis pointing at the target.
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Pose {
        let fwd = (target - eye).normalize();
        let right = fwd.cross(up).normalize();
        let down = fwd.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let q = rotmat_to_quat(&r);
        Pose::new(q, -(r * eye))
    }
}

/// Quaternion from an orthonormal rotation matrix (Shepperd's method).
pub fn rotmat_to_quat(r: &Matrix3<f64>) -> Quat {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        Quat::new(
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        )
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        Quat::new(
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        )
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        Quat::new(
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        Quat::new(
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        )
    };
    q.normalize().expect("rotation matrix yields unit quaternion")
}

/// Applies `b` first, then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::new(
        a.rotation.mul(&b.rotation),
        a.rotation.rotate(&b.translation) + a.translation,
    )
}

pub fn inverse(p: &Pose) -> Pose {
    let q_inv = p
        .rotation
        .normalize()
        .expect("pose rotation must have nonzero norm")
        .conjugate();
    let t_inv = -q_inv.rotate(&p.translation);
    Pose::new(q_inv, t_inv)
}

/// Angle of the relative rotation between two poses, in degrees.
pub fn rotation_error_deg(a: &Pose, b: &Pose) -> f64 {
    let qa = a.rotation.normalize().expect("nonzero quaternion");
    let qb = b.rotation.normalize().expect("nonzero quaternion");
    qa.mul(&qb.conjugate()).angle().to_degrees()
}

/// Euclidean distance between camera centers, in meters.
pub fn translation_error_m(a: &Pose, b: &Pose) -> f64 {
    (a.camera_center() - b.camera_center()).norm()
}

/// Pinhole camera intrinsics (pixels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Symmetric intrinsics with the given horizontal field of view.
    pub fn with_fov(width: usize, height: usize, fov_x_deg: f64) -> Self {
        let fx = width as f64 / (2.0 * (fov_x_deg.to_radians() / 2.0).tan());
        CameraIntrinsics {
            fx,
            fy: fx,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    /// Jacobian of the projection with respect to the camera-space point,
    /// evaluated at `p_cam` (rows: du, dv; columns: x, y, z).
    pub fn projection_jacobian(&self, p_cam: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
        let z = p_cam.z;
        let iz = 1.0 / z;
        let iz2 = iz * iz;
        nalgebra::Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p_cam.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p_cam.y * iz2,
        )
    }

    pub fn project_camera_point(
        &self,
        p_cam: &Vector3<f64>,
    ) -> Result<(Vector2<f64>, f64), GeometryError> {
        if p_cam.z <= DEPTH_EPS {
            return Err(GeometryError::BehindCamera { depth: p_cam.z });
        }
        let u = self.fx * p_cam.x / p_cam.z + self.cx;
        let v = self.fy * p_cam.y / p_cam.z + self.cy;
        Ok((Vector2::new(u, v), p_cam.z))
    }
}

/// Projects a world point into the image; returns (pixel, depth).
pub fn project(
    p_world: &Vector3<f64>,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<(Vector2<f64>, f64), GeometryError> {
    k.project_camera_point(&pose.transform(p_world))
}

/// Lifts a pixel with known depth to a camera-space point.
pub fn backproject(
    pixel: &Vector2<f64>,
    depth: f64,
    k: &CameraIntrinsics,
) -> Result<Vector3<f64>, GeometryError> {
    if depth <= 0.0 {
        return Err(GeometryError::InvalidDepth { depth });
    }
    Ok(Vector3::new(
        (pixel.x - k.cx) / k.fx * depth,
        (pixel.y - k.cy) / k.fy * depth,
        depth,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap()
    }

    #[test]
    fn identity_quaternion_gives_identity_matrix() {
        let r = quat_to_rotmat(&Quat::IDENTITY).unwrap();
        assert_abs_diff_eq!(r, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn z_flip_quaternion_gives_diag() {
        let r = quat_to_rotmat(&Quat::new(0.0, 0.0, 0.0, 1.0)).unwrap();
        let expected = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        assert_abs_diff_eq!(r, expected, epsilon = 1e-15);
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        assert_eq!(
            quat_to_rotmat(&Quat::new(0.0, 0.0, 0.0, 0.0)),
            Err(GeometryError::ZeroNormQuaternion)
        );
    }

    #[test]
    fn rotmat_partials_match_finite_differences() {
        let q = Quat::new(0.8, -0.3, 0.45, 0.2);
        let parts = rotmat_partials(&q);
        let h = 1e-7;
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            match k {
                0 => {
                    qp.w += h;
                    qm.w -= h;
                }
                1 => {
                    qp.x += h;
                    qm.x -= h;
                }
                2 => {
                    qp.y += h;
                    qm.y -= h;
                }
                _ => {
                    qp.z += h;
                    qm.z -= h;
                }
            }
            let fd = (qp.to_rotation_matrix() - qm.to_rotation_matrix()) / (2.0 * h);
            assert_abs_diff_eq!(parts[k], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn project_optical_axis_point() {
        let k = test_intrinsics();
        let (px, depth) = project(&Vector3::new(0.0, 0.0, 1.0), &Pose::IDENTITY, &k).unwrap();
        assert_abs_diff_eq!(px, Vector2::new(50.0, 50.0), epsilon = 1e-12);
        assert_abs_diff_eq!(depth, 1.0);
    }

    #[test]
    fn project_off_axis_point() {
        let k = test_intrinsics();
        let (px, depth) = project(&Vector3::new(0.1, 0.0, 1.0), &Pose::IDENTITY, &k).unwrap();
        assert_abs_diff_eq!(px, Vector2::new(60.0, 50.0), epsilon = 1e-12);
        assert_abs_diff_eq!(depth, 1.0);
    }

    #[test]
    fn project_behind_camera_errors() {
        let k = test_intrinsics();
        let err = project(&Vector3::new(0.0, 0.0, -1.0), &Pose::IDENTITY, &k).unwrap_err();
        assert!(matches!(err, GeometryError::BehindCamera { .. }));
    }

    #[test]
    fn backproject_known_points() {
        let k = test_intrinsics();
        let p = backproject(&Vector2::new(50.0, 50.0), 2.0, &k).unwrap();
        assert_abs_diff_eq!(p, Vector3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
        let p = backproject(&Vector2::new(60.0, 50.0), 1.0, &k).unwrap();
        assert_abs_diff_eq!(p, Vector3::new(0.1, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn backproject_zero_depth_errors() {
        let k = test_intrinsics();
        assert!(matches!(
            backproject(&Vector2::new(10.0, 10.0), 0.0, &k),
            Err(GeometryError::InvalidDepth { .. })
        ));
    }

    #[test]
    fn compose_with_identity_is_noop() {
        let p = Pose::new(
            Quat::from_axis_angle(&Vector3::new(0.3, -1.0, 0.5), 0.7),
            Vector3::new(0.1, -0.2, 0.3),
        );
        let c = compose(&p, &Pose::IDENTITY);
        assert_abs_diff_eq!(c.translation, p.translation, epsilon = 1e-15);
        assert!(rotation_error_deg(&c, &p) < 1e-9);
    }

    #[test]
    fn inverse_of_identity_is_identity() {
        let inv = inverse(&Pose::IDENTITY);
        assert_abs_diff_eq!(inv.translation, Vector3::zeros(), epsilon = 1e-15);
        assert!(inv.rotation.mul(&Quat::IDENTITY.conjugate()).angle() < 1e-12);
    }

    #[test]
    fn look_at_points_camera_at_target() {
        let eye = Vector3::new(1.0, 2.0, -3.0);
        let target = Vector3::new(0.0, 0.0, 0.0);
        let pose = Pose::look_at(&eye, &target, &Vector3::new(0.0, -1.0, 0.0));
        let cam = pose.transform(&target);
        // Target lies on the optical axis in front of the camera.
        assert_abs_diff_eq!(cam.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cam.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cam.z, (eye - target).norm(), epsilon = 1e-12);
        assert_abs_diff_eq!(pose.camera_center(), eye, epsilon = 1e-12);
    }

    fn arb_unit_quat() -> impl Strategy<Value = Quat> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_filter_map(
            "nonzero quaternion",
            |(w, x, y, z)| {
                let q = Quat::new(w, x, y, z);
                (q.norm() > 0.1).then(|| q.normalize().unwrap())
            },
        )
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            arb_unit_quat(),
            -5.0..5.0f64,
            -5.0..5.0f64,
            -5.0..5.0f64,
        )
            .prop_map(|(q, x, y, z)| Pose::new(q, Vector3::new(x, y, z)))
    }

    proptest! {
        #[test]
        fn rotmat_is_orthonormal(q in arb_unit_quat()) {
            let r = quat_to_rotmat(&q).unwrap();
            let rtr = r.transpose() * r;
            prop_assert!((rtr - Matrix3::identity()).norm() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn rotmat_scale_invariance(q in arb_unit_quat(), s in 0.1..10.0f64) {
            let scaled = Quat::new(q.w * s, q.x * s, q.y * s, q.z * s);
            let diff = quat_to_rotmat(&q).unwrap() - quat_to_rotmat(&scaled).unwrap();
            prop_assert!(diff.norm() < 1e-12);
        }

        #[test]
        fn negated_quaternion_same_rotation(q in arb_unit_quat()) {
            let neg = Quat::new(-q.w, -q.x, -q.y, -q.z);
            let diff = quat_to_rotmat(&q).unwrap() - quat_to_rotmat(&neg).unwrap();
            prop_assert!(diff.norm() < 1e-12);
        }

        #[test]
        fn pose_inverse_round_trip(p in arb_pose(), x in -5.0..5.0f64, y in -5.0..5.0f64, z in -5.0..5.0f64) {
            let pt = Vector3::new(x, y, z);
            let round = compose(&inverse(&p), &p).transform(&pt);
            prop_assert!((round - pt).norm() < 1e-9);
        }

        #[test]
        fn compose_inverse_is_identity(p in arb_pose()) {
            let id = compose(&p, &inverse(&p));
            prop_assert!(id.translation.norm() < 1e-9);
            prop_assert!(id.rotation.angle() < 1e-9);
        }

        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let lhs = compose(&compose(&a, &b), &c);
            let rhs = compose(&a, &compose(&b, &c));
            prop_assert!((lhs.translation - rhs.translation).norm() < 1e-9);
            prop_assert!(rotation_error_deg(&lhs, &rhs) < 1e-9);
        }

        #[test]
        fn project_backproject_round_trip(
            u in 0.0..100.0f64, v in 0.0..100.0f64, depth in 1e-3..50.0f64
        ) {
            let k = test_intrinsics();
            let pixel = Vector2::new(u, v);
            let p_cam = backproject(&pixel, depth, &k).unwrap();
            let (px, d) = k.project_camera_point(&p_cam).unwrap();
            prop_assert!((px - pixel).norm() < 1e-9);
            prop_assert!((d - depth).abs() < 1e-9);
        }
    }
}
