//! Keypoint text files: one `u v reliability d_1 ... d_V` line per keypoint.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector2;

use super::IoError;
use crate::descriptors::KeypointSet;

pub fn write_keypoints(path: &Path, set: &KeypointSet) -> Result<(), IoError> {
    let mut out = String::from("# u v reliability d_1 ... d_V\n");
    for i in 0..set.len() {
        out.push_str(&format!(
            "{} {} {}",
            set.pixels[i].x, set.pixels[i].y, set.reliability[i]
        ));
        for d in &set.descriptors[i] {
            out.push_str(&format!(" {d}"));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| IoError::io(path, e))
}

pub fn read_keypoints(path: &Path) -> Result<KeypointSet, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut set = KeypointSet::default();
    let mut dim: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let fields =
            fields.map_err(|_| IoError::parse(path, lineno, "bad float field".to_string()))?;
        if fields.len() < 4 {
            return Err(IoError::parse(
                path,
                lineno,
                format!("expected at least 4 fields, got {}", fields.len()),
            ));
        }
        let v = fields.len() - 3;
        match dim {
            None => dim = Some(v),
            Some(d) if d != v => {
                return Err(IoError::parse(
                    path,
                    lineno,
                    format!("descriptor length {v} differs from earlier {d}"),
                ));
            }
            _ => {}
        }
        set.pixels.push(Vector2::new(fields[0], fields[1]));
        set.reliability.push(fields[2]);
        set.descriptors.push(fields[3..].to_vec());
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keypoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("view.kpts");
        let set = KeypointSet {
            pixels: vec![Vector2::new(10.0, 20.0), Vector2::new(3.5, 4.25)],
            descriptors: vec![vec![0.1, -0.2, 0.3], vec![1.0, 0.0, -1.0]],
            reliability: vec![0.9, 0.5],
            truncated: false,
        };
        write_keypoints(&path, &set).unwrap();
        let back = read_keypoints(&path).unwrap();
        assert_eq!(back.pixels, set.pixels);
        assert_eq!(back.descriptors, set.descriptors);
        assert_eq!(back.reliability, set.reliability);
    }

    #[test]
    fn inconsistent_dims_report_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("view.kpts");
        std::fs::write(&path, "1 2 0.5 0.1 0.2\n3 4 0.5 0.1\n").unwrap();
        match read_keypoints(&path) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
