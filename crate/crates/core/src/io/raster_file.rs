//! Lossless float raster format for depth and feature maps.
//!
//! Layout (little-endian):
//! ```text
//! magic    4 bytes  "FRST"
//! version  u32      1
//! width    u32
//! height   u32
//! channels u32
//! data     width*height*channels x f32, row-major, channel-interleaved
//! ```

use std::path::Path;

use super::{read_f32_le, read_u32_le, IoError};
use crate::raster::Raster;

pub const RASTER_MAGIC: &[u8; 4] = b"FRST";
const RASTER_VERSION: u32 = 1;

pub fn write_raster(path: &Path, raster: &Raster) -> Result<(), IoError> {
    let mut buf = Vec::with_capacity(20 + raster.data.len() * 4);
    buf.extend_from_slice(RASTER_MAGIC);
    buf.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    buf.extend_from_slice(&(raster.width as u32).to_le_bytes());
    buf.extend_from_slice(&(raster.height as u32).to_le_bytes());
    buf.extend_from_slice(&(raster.channels as u32).to_le_bytes());
    for &x in &raster.data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| IoError::io(path, e))
}

pub fn read_raster(path: &Path) -> Result<Raster, IoError> {
    let buf = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    let display = path.display().to_string();
    if buf.len() < 8 || &buf[..4] != RASTER_MAGIC {
        return Err(IoError::BadMagic {
            path: display,
            format: "raster",
        });
    }
    let mut off = 4;
    let version = read_u32_le(&buf, &mut off).unwrap();
    if version != RASTER_VERSION {
        return Err(IoError::BadVersion {
            path: display,
            format: "raster",
            version,
        });
    }
    let truncated = |msg: &str| IoError::Truncated {
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    let width = read_u32_le(&buf, &mut off).ok_or_else(|| truncated("header"))? as usize;
    let height = read_u32_le(&buf, &mut off).ok_or_else(|| truncated("header"))? as usize;
    let channels = read_u32_le(&buf, &mut off).ok_or_else(|| truncated("header"))? as usize;
    let n = width * height * channels;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(
            read_f32_le(&buf, &mut off).ok_or_else(|| truncated("pixel data"))? as f64,
        );
    }
    let mut raster = Raster::from_data(width, height, channels, data)
        .expect("length checked during read");
    if let Some(stem) = path.file_stem() {
        raster.source_id = Some(stem.to_string_lossy().into_owned());
    }
    Ok(raster)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.fraster");
        let mut r = Raster::zeros(5, 3, 4);
        for (i, x) in r.data.iter_mut().enumerate() {
            *x = (i as f64) * 0.25 - 3.0;
        }
        write_raster(&path, &r).unwrap();
        let back = read_raster(&path).unwrap();
        assert_eq!((back.width, back.height, back.channels), (5, 3, 4));
        assert_eq!(back.data, r.data);
        assert_eq!(back.source_id.as_deref(), Some("map"));
    }

    #[test]
    fn truncated_raster_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.fraster");
        write_raster(&path, &Raster::zeros(4, 4, 1)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(read_raster(&path), Err(IoError::Truncated { .. })));
    }
}
