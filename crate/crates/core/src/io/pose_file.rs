//! Line-oriented pose files: `name qw qx qy qz tx ty tz`, world-to-camera.
//!
//! Floats are written with Rust's shortest-round-trip formatting, so a
//! write/read cycle reproduces the exact f64 values.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use super::IoError;
use crate::geometry::{Pose, Quat};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedPose {
    pub name: String,
    pub pose: Pose,
}

pub fn write_pose_file(path: &Path, poses: &[NamedPose]) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str("# name qw qx qy qz tx ty tz (world-to-camera)\n");
    for np in poses {
        let q = np.pose.rotation;
        let t = np.pose.translation;
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            np.name, q.w, q.x, q.y, q.z, t.x, t.y, t.z
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| IoError::io(path, e))
}

pub fn read_pose_file(path: &Path) -> Result<Vec<NamedPose>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut poses = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(IoError::parse(
                path,
                lineno,
                format!("expected 8 fields, got {}", fields.len()),
            ));
        }
        let mut vals = [0.0f64; 7];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = fields[i + 1].parse().map_err(|_| {
                IoError::parse(path, lineno, format!("bad float `{}`", fields[i + 1]))
            })?;
        }
        poses.push(NamedPose {
            name: fields[0].to_string(),
            pose: Pose::new(
                Quat::new(vals[0], vals[1], vals[2], vals[3]),
                Vector3::new(vals[4], vals[5], vals[6]),
            ),
        });
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        let poses = vec![
            NamedPose {
                name: "view_000.png".into(),
                pose: Pose::new(
                    Quat::new(0.7123456789, -0.1, 0.33333333333333, 0.6066),
                    Vector3::new(1.0 / 3.0, -2.5e-7, 4.0),
                ),
            },
            NamedPose {
                name: "view_001.png".into(),
                pose: Pose::IDENTITY,
            },
        ];
        write_pose_file(&path, &poses).unwrap();
        let back = read_pose_file(&path).unwrap();
        assert_eq!(poses, back);
    }

    #[test]
    fn short_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        std::fs::write(&path, "# header\nv 1 0 0 0 1 2\n").unwrap();
        match read_pose_file(&path) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
