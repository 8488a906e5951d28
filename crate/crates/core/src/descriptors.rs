//! Pluggable descriptor providers standing in for a learned feature
//! extractor.
//!
//! Two implementations share one contract: [`SyntheticProvider`] renders the
//! feature channels of a ground-truth scene at the image's known pose (on a
//! coarse grid, bilinearly upsampled, with optional noise), and
//! [`FileProvider`] ingests precomputed descriptor rasters and keypoint files
//! from disk. Images are identified by their `source_id`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose};
use crate::io::{read_keypoints, read_raster, IoError};
use crate::raster::Raster;
use crate::render::{render, RenderChannels, Scene};
use crate::rng::{hash_str, mix_seed};

/// Default number of keypoints sampled from a query image.
pub const DEFAULT_KEYPOINT_COUNT: usize = 1000;

/// Default descriptor dimension.
pub const DEFAULT_FEATURE_DIM: usize = 64;

/// Coarse-grid stride of the synthetic teacher, mirroring an extractor that
/// works at 1/8 resolution.
pub const TEACHER_STRIDE: usize = 8;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("image size {got} does not match provider expectation {expected}")]
    SizeMismatch { expected: String, got: String },
    #[error("image has no source id; the provider cannot identify it")]
    MissingSourceId,
    #[error("no pose registered for image `{0}`")]
    UnknownImage(String),
    #[error("keypoint count must be >= 1")]
    ZeroKeypoints,
    #[error("descriptor dimension {got} does not match provider dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Sparse keypoints with descriptors, ordered by non-increasing reliability.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeypointSet {
    pub pixels: Vec<Vector2<f64>>,
    pub descriptors: Vec<Vec<f64>>,
    /// Reliability scores in [0, 1], non-increasing.
    pub reliability: Vec<f64>,
    /// Set when fewer keypoints than requested were available.
    pub truncated: bool,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.descriptors.first().map_or(0, Vec::len)
    }
}

/// Full-resolution per-pixel descriptor map plus the native grid size it was
/// computed on before upsampling.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub map: Raster,
    pub native_width: usize,
    pub native_height: usize,
}

pub trait DescriptorProvider: Send + Sync {
    fn feature_dim(&self) -> usize;

    /// Per-pixel descriptor map at the image's full resolution.
    fn dense_features(&self, image: &Raster) -> Result<FeatureMap, DescriptorError>;

    /// The `k` most reliable keypoints, reliability non-increasing, ties
    /// broken by row-major pixel order.
    fn sparse_keypoints(&self, image: &Raster, k: usize) -> Result<KeypointSet, DescriptorError>;
}

/// Teacher oracle backed by a ground-truth scene: descriptors come from
/// rendering the scene's feature channels at the image's registered pose.
pub struct SyntheticProvider {
    scene: Arc<Scene>,
    intrinsics: CameraIntrinsics,
    poses: HashMap<String, Pose>,
    /// Stddev of i.i.d. Gaussian noise added to the teacher map.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Coarse-grid stride; 1 disables the grid and uses the raw render.
    pub stride: usize,
}

impl SyntheticProvider {
    pub fn new(
        scene: Arc<Scene>,
        intrinsics: CameraIntrinsics,
        poses: HashMap<String, Pose>,
        noise_sigma: f64,
        seed: u64,
    ) -> Self {
        SyntheticProvider {
            scene,
            intrinsics,
            poses,
            noise_sigma,
            seed,
            stride: TEACHER_STRIDE,
        }
    }

    pub fn register_pose(&mut self, id: impl Into<String>, pose: Pose) {
        self.poses.insert(id.into(), pose);
    }

    fn pose_for<'a>(&'a self, image: &'a Raster) -> Result<(&'a str, &'a Pose), DescriptorError> {
        let id = image
            .source_id
            .as_deref()
            .ok_or(DescriptorError::MissingSourceId)?;
        let pose = self
            .poses
            .get(id)
            .ok_or_else(|| DescriptorError::UnknownImage(id.to_string()))?;
        Ok((id, pose))
    }
}

impl DescriptorProvider for SyntheticProvider {
    fn feature_dim(&self) -> usize {
        self.scene.feature_dim
    }

    fn dense_features(&self, image: &Raster) -> Result<FeatureMap, DescriptorError> {
        if image.width != self.intrinsics.width || image.height != self.intrinsics.height {
            return Err(DescriptorError::SizeMismatch {
                expected: format!("{}x{}", self.intrinsics.width, self.intrinsics.height),
                got: format!("{}x{}", image.width, image.height),
            });
        }
        let (id, pose) = self.pose_for(image)?;
        let rendered = render(
            &self.scene,
            pose,
            &self.intrinsics,
            RenderChannels::features_depth(),
        );
        let full = rendered.features.expect("features channel requested");
        let (map, nw, nh) = if self.stride > 1 {
            let (coarse, nw, nh) = sample_grid(&full, self.stride);
            (upsample_bilinear(&coarse, self.stride, full.width, full.height), nw, nh)
        } else {
            let (w, h) = (full.width, full.height);
            (full, w, h)
        };
        let mut map = map;
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, hash_str(id)));
            for x in map.data.iter_mut() {
                *x += self.noise_sigma * crate::rng::normal(&mut rng);
            }
        }
        Ok(FeatureMap {
            map,
            native_width: nw,
            native_height: nh,
        })
    }

    fn sparse_keypoints(&self, image: &Raster, k: usize) -> Result<KeypointSet, DescriptorError> {
        let dense = self.dense_features(image)?;
        Ok(keypoints_from_dense(&dense.map, k)?)
    }
}

/// Samples the map at grid nodes spaced `stride` pixels apart.
fn sample_grid(map: &Raster, stride: usize) -> (Raster, usize, usize) {
    let nx = (map.width - 1) / stride + 1;
    let ny = (map.height - 1) / stride + 1;
    let mut coarse = Raster::zeros(nx, ny, map.channels);
    for gy in 0..ny {
        for gx in 0..nx {
            let src = map.pixel(gx * stride, gy * stride);
            coarse.pixel_mut(gx, gy).copy_from_slice(src);
        }
    }
    (coarse, nx, ny)
}

/// Bilinear upsampling of a grid whose nodes sit at multiples of `stride`,
/// clamping to the edge beyond the last node.
fn upsample_bilinear(coarse: &Raster, stride: usize, width: usize, height: usize) -> Raster {
    let mut out = Raster::zeros(width, height, coarse.channels);
    let (nx, ny) = (coarse.width, coarse.height);
    for y in 0..height {
        let gy = y as f64 / stride as f64;
        let y0 = (gy.floor() as usize).min(ny.saturating_sub(2));
        let fy = if ny > 1 { (gy - y0 as f64).clamp(0.0, 1.0) } else { 0.0 };
        let y1 = (y0 + 1).min(ny - 1);
        for x in 0..width {
            let gx = x as f64 / stride as f64;
            let x0 = (gx.floor() as usize).min(nx.saturating_sub(2));
            let fx = if nx > 1 { (gx - x0 as f64).clamp(0.0, 1.0) } else { 0.0 };
            let x1 = (x0 + 1).min(nx - 1);
            let (p00, p10) = (coarse.pixel(x0, y0), coarse.pixel(x1, y0));
            let (p01, p11) = (coarse.pixel(x0, y1), coarse.pixel(x1, y1));
            let dst = out.pixel_mut(x, y);
            for c in 0..dst.len() {
                let top = p00[c] * (1.0 - fx) + p10[c] * fx;
                let bot = p01[c] * (1.0 - fx) + p11[c] * fx;
                dst[c] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Reliability as the local gradient magnitude of the direction-normalized
/// descriptor field, scaled to [0, 1], with top-`k` selection (ties by
/// row-major order). Normalizing before the gradient keeps the score high
/// only where the descriptor *direction* changes, which is what cosine
/// matching can discriminate.
pub fn keypoints_from_dense(map: &Raster, k: usize) -> Result<KeypointSet, DescriptorError> {
    if k == 0 {
        return Err(DescriptorError::ZeroKeypoints);
    }
    let (w, h, c) = (map.width, map.height, map.channels);
    let mut unit = vec![0.0f64; w * h * c];
    for (src, dst) in map.data.chunks_exact(c).zip(unit.chunks_exact_mut(c)) {
        let norm = src.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s / norm;
            }
        }
    }
    let at = |x: usize, y: usize| &unit[(y * w + x) * c..(y * w + x + 1) * c];
    let mut reliability = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let xm = at(x.saturating_sub(1), y);
            let xp = at((x + 1).min(w - 1), y);
            let ym = at(x, y.saturating_sub(1));
            let yp = at(x, (y + 1).min(h - 1));
            let mut g2 = 0.0;
            for ch in 0..c {
                let gx = (xp[ch] - xm[ch]) * 0.5;
                let gy = (yp[ch] - ym[ch]) * 0.5;
                g2 += gx * gx + gy * gy;
            }
            reliability[y * w + x] = g2.sqrt();
        }
    }
    let max = reliability.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for r in reliability.iter_mut() {
            *r /= max;
        }
    }
    let mut order: Vec<usize> = (0..w * h).collect();
    order.sort_by(|&a, &b| reliability[b].total_cmp(&reliability[a]).then(a.cmp(&b)));
    let take = k.min(order.len());
    let mut set = KeypointSet {
        truncated: take < k,
        ..Default::default()
    };
    for &idx in &order[..take] {
        let (x, y) = (idx % w, idx / w);
        set.pixels.push(Vector2::new(x as f64, y as f64));
        set.descriptors.push(map.pixel(x, y).to_vec());
        set.reliability.push(reliability[idx]);
    }
    Ok(set)
}

/// Reads `<id>.fmap` rasters and `<id>.kpts` keypoint files from a directory.
pub struct FileProvider {
    dir: PathBuf,
    feature_dim: usize,
}

impl FileProvider {
    pub fn new(dir: impl Into<PathBuf>, feature_dim: usize) -> Self {
        FileProvider {
            dir: dir.into(),
            feature_dim,
        }
    }

    fn id_of<'a>(&self, image: &'a Raster) -> Result<&'a str, DescriptorError> {
        image
            .source_id
            .as_deref()
            .ok_or(DescriptorError::MissingSourceId)
    }
}

impl DescriptorProvider for FileProvider {
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn dense_features(&self, image: &Raster) -> Result<FeatureMap, DescriptorError> {
        let id = self.id_of(image)?;
        let map = read_raster(&self.dir.join(format!("{id}.fmap")))?;
        if map.channels != self.feature_dim {
            return Err(DescriptorError::DimMismatch {
                expected: self.feature_dim,
                got: map.channels,
            });
        }
        if map.width != image.width || map.height != image.height {
            return Err(DescriptorError::SizeMismatch {
                expected: format!("{}x{}", image.width, image.height),
                got: format!("{}x{}", map.width, map.height),
            });
        }
        let (nw, nh) = (map.width, map.height);
        Ok(FeatureMap {
            map,
            native_width: nw,
            native_height: nh,
        })
    }

    fn sparse_keypoints(&self, image: &Raster, k: usize) -> Result<KeypointSet, DescriptorError> {
        if k == 0 {
            return Err(DescriptorError::ZeroKeypoints);
        }
        let id = self.id_of(image)?;
        let mut set = read_keypoints(&self.dir.join(format!("{id}.kpts")))?;
        if !set.is_empty() && set.feature_dim() != self.feature_dim {
            return Err(DescriptorError::DimMismatch {
                expected: self.feature_dim,
                got: set.feature_dim(),
            });
        }
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.sort_by(|&a, &b| {
            set.reliability[b].total_cmp(&set.reliability[a]).then_with(|| {
                let ka = (set.pixels[a].y, set.pixels[a].x);
                let kb = (set.pixels[b].y, set.pixels[b].x);
                ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        let take = k.min(order.len());
        let mut out = KeypointSet {
            truncated: take < k,
            ..Default::default()
        };
        for &i in &order[..take] {
            out.pixels.push(set.pixels[i]);
            out.descriptors.push(std::mem::take(&mut set.descriptors[i]));
            out.reliability.push(set.reliability[i]);
        }
        Ok(out)
    }
}
