//! On-disk formats: the binary scene format, the float raster format, PNG
//! images, and the line-oriented pose/keypoint text files.
//!
//! All binary formats are little-endian with 32-bit floats; text files use
//! `#` for comments and whitespace-separated fields. Poses are stored
//! world-to-camera as `name qw qx qy qz tx ty tz`.

mod keypoint_file;
mod png;
mod pose_file;
mod raster_file;
mod scene_file;

pub use keypoint_file::{read_keypoints, write_keypoints};
pub use png::{load_png, save_png};
pub use pose_file::{read_pose_file, write_pose_file, NamedPose};
pub use raster_file::{read_raster, write_raster, RASTER_MAGIC};
pub use scene_file::{read_scene, write_scene, SCENE_MAGIC};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic, not a {format} file")]
    BadMagic { path: String, format: &'static str },
    #[error("{path}: unsupported {format} version {version}")]
    BadVersion {
        path: String,
        format: &'static str,
        version: u32,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: truncated file ({msg})")]
    Truncated { path: String, msg: String },
    #[error("image error for {path}: {source}")]
    Image {
        path: String,
        source: image::ImageError,
    },
    #[error(transparent)]
    Scene(#[from] crate::render::SceneError),
}

impl IoError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        IoError::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}

pub(crate) fn read_f32_le(buf: &[u8], off: &mut usize) -> Option<f32> {
    let bytes = buf.get(*off..*off + 4)?;
    *off += 4;
    Some(f32::from_le_bytes(bytes.try_into().unwrap()))
}

pub(crate) fn read_u32_le(buf: &[u8], off: &mut usize) -> Option<u32> {
    let bytes = buf.get(*off..*off + 4)?;
    *off += 4;
    Some(u32::from_le_bytes(bytes.try_into().unwrap()))
}
