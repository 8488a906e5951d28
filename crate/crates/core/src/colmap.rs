//! COLMAP text model ingestion (cameras.txt, images.txt, points3D.txt).
//!
//! COLMAP stores world-to-camera poses as `qw qx qy qz tx ty tz`, the same
//! convention used here, so only the container format is translated. Points
//! become Gaussian initial positions with scale from the nearest-neighbor
//! distance, opacity 0.5 and zero descriptors.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;

use crate::geometry::{CameraIntrinsics, Pose, Quat};
use crate::io::IoError;
use crate::render::{Gaussian, Scene};

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    pub id: u64,
    pub name: String,
    pub camera_id: u64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapPoint {
    pub position: Vector3<f64>,
    pub color: Vector3<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ColmapModel {
    pub cameras: BTreeMap<u64, CameraIntrinsics>,
    pub images: Vec<ColmapImage>,
    pub points: Vec<ColmapPoint>,
}

fn parse_floats(path: &Path, lineno: usize, fields: &[&str]) -> Result<Vec<f64>, IoError> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| IoError::parse(path, lineno, format!("bad float `{f}`")))
        })
        .collect()
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_cameras(path: &Path) -> Result<BTreeMap<u64, CameraIntrinsics>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut cameras = BTreeMap::new();
    for (lineno, line) in content_lines(&text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 5 {
            return Err(IoError::parse(
                path,
                lineno,
                format!("expected at least 5 fields, got {}", fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| IoError::parse(path, lineno, format!("bad camera id `{}`", fields[0])))?;
        let model = fields[1];
        let dims = parse_floats(path, lineno, &fields[2..4])?;
        let params = parse_floats(path, lineno, &fields[4..])?;
        let (fx, fy, cx, cy) = match model {
            "PINHOLE" if params.len() >= 4 => (params[0], params[1], params[2], params[3]),
            "SIMPLE_PINHOLE" if params.len() >= 3 => (params[0], params[0], params[1], params[2]),
            "PINHOLE" | "SIMPLE_PINHOLE" => {
                return Err(IoError::parse(
                    path,
                    lineno,
                    format!("camera model {model} is missing parameters"),
                ));
            }
            other => {
                return Err(IoError::parse(
                    path,
                    lineno,
                    format!("unsupported camera model `{other}` (only PINHOLE and SIMPLE_PINHOLE)"),
                ));
            }
        };
        let k = CameraIntrinsics::new(fx, fy, cx, cy, dims[0] as usize, dims[1] as usize)
            .map_err(|e| IoError::parse(path, lineno, e.to_string()))?;
        cameras.insert(id, k);
    }
    Ok(cameras)
}

fn parse_images(path: &Path) -> Result<Vec<ColmapImage>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut images = Vec::new();
    // Image entries alternate: a pose line, then a 2D-point line (skipped).
    let mut expect_points_line = false;
    for (lineno, line) in content_lines(&text) {
        if expect_points_line {
            expect_points_line = false;
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 10 {
            return Err(IoError::parse(
                path,
                lineno,
                format!("expected 10 fields in image line, got {}", fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| IoError::parse(path, lineno, format!("bad image id `{}`", fields[0])))?;
        let vals = parse_floats(path, lineno, &fields[1..8])?;
        let camera_id: u64 = fields[8].parse().map_err(|_| {
            IoError::parse(path, lineno, format!("bad camera id `{}`", fields[8]))
        })?;
        images.push(ColmapImage {
            id,
            name: fields[9].to_string(),
            camera_id,
            pose: Pose::new(
                Quat::new(vals[0], vals[1], vals[2], vals[3]),
                Vector3::new(vals[4], vals[5], vals[6]),
            ),
        });
        expect_points_line = true;
    }
    Ok(images)
}

fn parse_points(path: &Path) -> Result<Vec<ColmapPoint>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut points = Vec::new();
    for (lineno, line) in content_lines(&text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 8 {
            return Err(IoError::parse(
                path,
                lineno,
                format!("expected at least 8 fields in point line, got {}", fields.len()),
            ));
        }
        let vals = parse_floats(path, lineno, &fields[1..7])?;
        points.push(ColmapPoint {
            position: Vector3::new(vals[0], vals[1], vals[2]),
            color: Vector3::new(vals[3] / 255.0, vals[4] / 255.0, vals[5] / 255.0),
        });
    }
    Ok(points)
}

/// Loads a COLMAP text model directory.
pub fn load_colmap(dir: &Path) -> Result<ColmapModel, IoError> {
    Ok(ColmapModel {
        cameras: parse_cameras(&dir.join("cameras.txt"))?,
        images: parse_images(&dir.join("images.txt"))?,
        points: parse_points(&dir.join("points3D.txt"))?,
    })
}

/// Initial scene from an SfM point cloud: isotropic scale from the
/// nearest-neighbor distance (clamped), opacity 0.5, zero descriptors.
pub fn scene_from_colmap(model: &ColmapModel, feature_dim: usize) -> Scene {
    let n = model.points.len();
    let gaussians = model
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut nn = f64::INFINITY;
            for (j, q) in model.points.iter().enumerate() {
                if i != j {
                    nn = nn.min((p.position - q.position).norm());
                }
            }
            let sigma = if n > 1 && nn.is_finite() {
                (nn * 0.5).clamp(1e-4, 1.0)
            } else {
                0.05
            };
            Gaussian::new(
                p.position,
                Quat::IDENTITY,
                Vector3::new(sigma, sigma, sigma),
                0.5,
                p.color,
                vec![0.0; feature_dim],
            )
        })
        .collect();
    Scene {
        gaussians,
        feature_dim,
        background: Vector3::zeros(),
    }
}
