//! Binary scene format.
//!
//! Layout (little-endian):
//! ```text
//! magic    4 bytes  "GSPL"
//! version  u32      1
//! count    u32      number of gaussians N
//! vdim     u32      feature dimension V
//! bg       3 x f32  background color
//! records  N x (3 + 4 + 3 + 1 + 3 + V) x f32
//!          position xyz, rotation wxyz, scale xyz, opacity, color rgb,
//!          feature[V]
//! ```

use std::path::Path;

use nalgebra::Vector3;

use super::{read_f32_le, read_u32_le, IoError};
use crate::geometry::Quat;
use crate::render::{Gaussian, Scene};

pub const SCENE_MAGIC: &[u8; 4] = b"GSPL";
const SCENE_VERSION: u32 = 1;

pub fn write_scene(path: &Path, scene: &Scene) -> Result<(), IoError> {
    let v = scene.feature_dim;
    let mut buf = Vec::with_capacity(20 + scene.len() * (14 + v) * 4);
    buf.extend_from_slice(SCENE_MAGIC);
    buf.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(scene.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(v as u32).to_le_bytes());
    for c in scene.background.iter() {
        buf.extend_from_slice(&(*c as f32).to_le_bytes());
    }
    for g in &scene.gaussians {
        let mut push = |x: f64| buf.extend_from_slice(&(x as f32).to_le_bytes());
        push(g.position.x);
        push(g.position.y);
        push(g.position.z);
        push(g.rotation.w);
        push(g.rotation.x);
        push(g.rotation.y);
        push(g.rotation.z);
        push(g.scale.x);
        push(g.scale.y);
        push(g.scale.z);
        push(g.opacity);
        push(g.color.x);
        push(g.color.y);
        push(g.color.z);
        for f in &g.feature {
            push(*f);
        }
    }
    std::fs::write(path, buf).map_err(|e| IoError::io(path, e))
}

pub fn read_scene(path: &Path) -> Result<Scene, IoError> {
    let buf = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    let display = path.display().to_string();
    if buf.len() < 8 || &buf[..4] != SCENE_MAGIC {
        return Err(IoError::BadMagic {
            path: display,
            format: "scene",
        });
    }
    let mut off = 4;
    let version = read_u32_le(&buf, &mut off).unwrap();
    if version != SCENE_VERSION {
        return Err(IoError::BadVersion {
            path: display,
            format: "scene",
            version,
        });
    }
    let truncated = |msg: &str| IoError::Truncated {
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    let count = read_u32_le(&buf, &mut off).ok_or_else(|| truncated("header"))? as usize;
    let vdim = read_u32_le(&buf, &mut off).ok_or_else(|| truncated("header"))? as usize;
    let mut bg = Vector3::zeros();
    for i in 0..3 {
        bg[i] = read_f32_le(&buf, &mut off).ok_or_else(|| truncated("background"))? as f64;
    }
    let mut gaussians = Vec::with_capacity(count);
    for rec in 0..count {
        let mut next = || -> Result<f64, IoError> {
            read_f32_le(&buf, &mut off)
                .map(|x| x as f64)
                .ok_or_else(|| truncated(&format!("record {rec} of {count}")))
        };
        let position = Vector3::new(next()?, next()?, next()?);
        let rotation = Quat::new(next()?, next()?, next()?, next()?);
        let scale = Vector3::new(next()?, next()?, next()?);
        let opacity = next()?;
        let color = Vector3::new(next()?, next()?, next()?);
        let mut feature = Vec::with_capacity(vdim);
        for _ in 0..vdim {
            feature.push(next()?);
        }
        gaussians.push(Gaussian {
            position,
            rotation,
            scale,
            opacity,
            color,
            feature,
        });
    }
    Ok(Scene::new(gaussians, vdim, bg)?)
}
