//! Seeded synthetic worlds: a Gaussian scene with procedural descriptors
//! plus jittered-orbit cameras, all reproducible bit-for-bit from the seed.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::SyntheticProvider;
use crate::geometry::{CameraIntrinsics, Pose, Quat};
use crate::io::{
    load_png, read_pose_file, read_scene, save_png, write_pose_file, write_scene, IoError,
    NamedPose,
};
use crate::raster::Raster;
use crate::render::{render, Gaussian, RenderChannels, Scene};
use crate::rng::{mix_seed, unit_vector};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("view {view} failed the coverage check after {retries} retries (mean alpha {best:.3} < {min:.3})")]
    CoverageFailed {
        view: usize,
        retries: usize,
        best: f64,
        min: f64,
    },
    #[error("n_gaussians and n_views must be >= 1")]
    EmptyWorld,
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    BadMeta(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_gaussians: usize,
    pub n_views: usize,
    pub n_queries: usize,
    pub feature_dim: usize,
    pub width: usize,
    pub height: usize,
    pub fov_x_deg: f64,
    /// Half extent of the cube the splats live in (meters).
    pub volume_half_extent: f64,
    pub orbit_radius: f64,
    /// Required mean accumulated alpha per view.
    pub min_mean_alpha: f64,
    pub max_retries: usize,
    /// Teacher noise used when building a provider for this world.
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_gaussians: 500,
            n_views: 20,
            n_queries: 20,
            feature_dim: 16,
            width: 160,
            height: 120,
            fov_x_deg: 50.0,
            volume_half_extent: 1.0,
            orbit_radius: 2.4,
            min_mean_alpha: 0.5,
            max_retries: 20,
            noise_sigma: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: SynthConfig,
    pub scene: Scene,
    pub intrinsics: CameraIntrinsics,
    pub train_poses: Vec<NamedPose>,
    pub query_poses: Vec<NamedPose>,
}

const DESCRIPTOR_SALT: u64 = 0x5eed_f00d;

/// Deterministic unit descriptor for scene point `index`.
pub fn procedural_descriptor(seed: u64, index: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ DESCRIPTOR_SALT, index as u64));
    unit_vector(&mut rng, dim)
}

fn orbit_pose(rng: &mut ChaCha8Rng, cfg: &SynthConfig, slot: f64) -> Pose {
    let azimuth: f64 = slot * std::f64::consts::TAU + rng.gen_range(-0.25..0.25);
    let elevation: f64 = rng.gen_range(0.15..0.55);
    let radius = cfg.orbit_radius * rng.gen_range(0.9..1.1);
    let eye = Vector3::new(
        radius * elevation.cos() * azimuth.cos(),
        radius * elevation.sin(),
        radius * elevation.cos() * azimuth.sin(),
    );
    let target = Vector3::new(
        rng.gen_range(-0.1..0.1),
        rng.gen_range(-0.1..0.1),
        rng.gen_range(-0.1..0.1),
    );
    Pose::look_at(&eye, &target, &Vector3::new(0.0, 1.0, 0.0))
}

fn covered_pose(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    scene: &Scene,
    k: &CameraIntrinsics,
    view: usize,
    slot: f64,
) -> Result<Pose, SynthError> {
    let mut best = 0.0f64;
    for _ in 0..cfg.max_retries.max(1) {
        let pose = orbit_pose(rng, cfg, slot);
        let out = render(
            scene,
            &pose,
            k,
            RenderChannels {
                rgb: false,
                features: false,
                depth: false,
            },
        );
        let mean = out.alpha.data.iter().sum::<f64>() / out.alpha.data.len() as f64;
        if mean > cfg.min_mean_alpha {
            return Ok(pose);
        }
        best = best.max(mean);
    }
    Err(SynthError::CoverageFailed {
        view,
        retries: cfg.max_retries,
        best,
        min: cfg.min_mean_alpha,
    })
}

/// Builds the world: splats in a bounded volume, cameras on a jittered orbit
/// facing it, every view passing the alpha coverage check.
pub fn generate_world(cfg: &SynthConfig) -> Result<SyntheticWorld, SynthError> {
    if cfg.n_gaussians == 0 || cfg.n_views == 0 {
        return Err(SynthError::EmptyWorld);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let he = cfg.volume_half_extent;
    let gaussians: Vec<Gaussian> = (0..cfg.n_gaussians)
        .map(|i| {
            let q = Quat::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize()
            .unwrap_or(Quat::IDENTITY);
            Gaussian::new(
                Vector3::new(
                    rng.gen_range(-he..he),
                    rng.gen_range(-he..he),
                    rng.gen_range(-he..he),
                ),
                q,
                Vector3::new(
                    rng.gen_range(0.04..0.12) * he,
                    rng.gen_range(0.04..0.12) * he,
                    rng.gen_range(0.04..0.12) * he,
                ),
                rng.gen_range(0.55..0.95),
                Vector3::new(
                    rng.gen_range(0.05..1.0),
                    rng.gen_range(0.05..1.0),
                    rng.gen_range(0.05..1.0),
                ),
                procedural_descriptor(cfg.seed, i, cfg.feature_dim),
            )
        })
        .collect();
    let scene = Scene::new(gaussians, cfg.feature_dim, Vector3::new(0.02, 0.02, 0.03))
        .expect("generated gaussians are valid");
    let intrinsics = CameraIntrinsics::with_fov(cfg.width, cfg.height, cfg.fov_x_deg);

    let mut train_poses = Vec::with_capacity(cfg.n_views);
    for view in 0..cfg.n_views {
        let slot = view as f64 / cfg.n_views as f64;
        let pose = covered_pose(&mut rng, cfg, &scene, &intrinsics, view, slot)?;
        train_poses.push(NamedPose {
            name: format!("view_{view:03}.png"),
            pose,
        });
    }
    let mut query_poses = Vec::with_capacity(cfg.n_queries);
    for query in 0..cfg.n_queries.max(1) {
        let slot = (query as f64 + 0.5) / cfg.n_queries.max(1) as f64;
        let pose = covered_pose(&mut rng, cfg, &scene, &intrinsics, cfg.n_views + query, slot)?;
        query_poses.push(NamedPose {
            name: format!("query_{query:03}.png"),
            pose,
        });
    }

    Ok(SyntheticWorld {
        config: cfg.clone(),
        scene,
        intrinsics,
        train_poses,
        query_poses,
    })
}

/// Initial scene for distillation: ground-truth geometry with neutral
/// appearance and zero descriptors.
pub fn initial_scene(world_scene: &Scene) -> Scene {
    let gaussians = world_scene
        .gaussians
        .iter()
        .map(|g| Gaussian {
            position: g.position,
            rotation: g.rotation,
            scale: g.scale,
            opacity: 0.5,
            color: Vector3::new(0.5, 0.5, 0.5),
            feature: vec![0.0; world_scene.feature_dim],
        })
        .collect();
    Scene {
        gaussians,
        feature_dim: world_scene.feature_dim,
        background: world_scene.background,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldMeta {
    pub config: SynthConfig,
    pub background: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// On-disk world layout:
/// ```text
/// world.json            metadata (config + intrinsics)
/// scene_gt.gsplat       ground-truth scene with descriptors
/// scene_init.gsplat     training initialization (neutral appearance)
/// train/poses.txt       world-to-camera poses, one per view
/// train/view_NNN.png    rendered training images
/// query/poses_gt.txt    held-out ground-truth poses
/// query/query_NNN.png   rendered query images
/// ```
pub fn write_world(dir: &Path, world: &SyntheticWorld) -> Result<(), SynthError> {
    let io_err = |e: std::io::Error| IoError::Io {
        path: dir.display().to_string(),
        source: e,
    };
    std::fs::create_dir_all(dir.join("train")).map_err(io_err)?;
    std::fs::create_dir_all(dir.join("query")).map_err(io_err)?;

    let meta = WorldMeta {
        config: world.config.clone(),
        background: [
            world.scene.background.x,
            world.scene.background.y,
            world.scene.background.z,
        ],
        fx: world.intrinsics.fx,
        fy: world.intrinsics.fy,
        cx: world.intrinsics.cx,
        cy: world.intrinsics.cy,
    };
    let meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    std::fs::write(dir.join("world.json"), meta_json).map_err(io_err)?;

    write_scene(&dir.join("scene_gt.gsplat"), &world.scene)?;
    write_scene(&dir.join("scene_init.gsplat"), &initial_scene(&world.scene))?;
    write_pose_file(&dir.join("train/poses.txt"), &world.train_poses)?;
    write_pose_file(&dir.join("query/poses_gt.txt"), &world.query_poses)?;

    for np in &world.train_poses {
        let out = render(
            &world.scene,
            &np.pose,
            &world.intrinsics,
            RenderChannels::rgb_only(),
        );
        save_png(&dir.join("train").join(&np.name), &out.rgb.expect("rgb"))?;
    }
    for np in &world.query_poses {
        let out = render(
            &world.scene,
            &np.pose,
            &world.intrinsics,
            RenderChannels::rgb_only(),
        );
        save_png(&dir.join("query").join(&np.name), &out.rgb.expect("rgb"))?;
    }
    Ok(())
}

pub struct LoadedWorld {
    pub meta: WorldMeta,
    pub scene_gt: Scene,
    pub scene_init: Scene,
    pub intrinsics: CameraIntrinsics,
    pub train_poses: Vec<NamedPose>,
    pub query_poses: Vec<NamedPose>,
}

pub fn load_world(dir: &Path) -> Result<LoadedWorld, SynthError> {
    let meta_path = dir.join("world.json");
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| IoError::Io {
        path: meta_path.display().to_string(),
        source: e,
    })?;
    let meta: WorldMeta = serde_json::from_str(&meta_text)
        .map_err(|e| SynthError::BadMeta(format!("{}: {e}", meta_path.display())))?;
    let intrinsics = CameraIntrinsics::new(
        meta.fx,
        meta.fy,
        meta.cx,
        meta.cy,
        meta.config.width,
        meta.config.height,
    )
    .map_err(|e| SynthError::BadMeta(e.to_string()))?;
    Ok(LoadedWorld {
        scene_gt: read_scene(&dir.join("scene_gt.gsplat"))?,
        scene_init: read_scene(&dir.join("scene_init.gsplat"))?,
        train_poses: read_pose_file(&dir.join("train/poses.txt"))?,
        query_poses: read_pose_file(&dir.join("query/poses_gt.txt"))?,
        intrinsics,
        meta,
    })
}

/// Teacher provider for a world: ground-truth scene plus every registered
/// train/query pose, keyed by image name stem.
pub fn world_provider(world: &LoadedWorld, noise_sigma: f64, seed: u64) -> SyntheticProvider {
    let mut poses = HashMap::new();
    for np in world.train_poses.iter().chain(&world.query_poses) {
        let stem = np.name.trim_end_matches(".png").to_string();
        poses.insert(stem, np.pose);
    }
    SyntheticProvider::new(
        Arc::new(world.scene_gt.clone()),
        world.intrinsics,
        poses,
        noise_sigma,
        seed,
    )
}

/// Loads one image from the world's query directory.
pub fn load_query_image(dir: &Path, name: &str) -> Result<Raster, IoError> {
    load_png(&dir.join("query").join(name))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> SynthConfig {
        SynthConfig {
            seed: 5,
            n_gaussians: 120,
            n_views: 4,
            n_queries: 2,
            feature_dim: 4,
            width: 48,
            height: 36,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_world() {
        let cfg = tiny_config();
        let a = generate_world(&cfg).unwrap();
        let b = generate_world(&cfg).unwrap();
        assert_eq!(a.scene, b.scene);
        assert_eq!(a.train_poses, b.train_poses);
        assert_eq!(a.query_poses, b.query_poses);
    }

    #[test]
    fn single_view_world() {
        let cfg = SynthConfig {
            n_views: 1,
            n_queries: 1,
            ..tiny_config()
        };
        let world = generate_world(&cfg).unwrap();
        assert_eq!(world.train_poses.len(), 1);
    }

    #[test]
    fn all_views_pass_coverage_check() {
        let world = generate_world(&tiny_config()).unwrap();
        for np in world.train_poses.iter().chain(&world.query_poses) {
            let out = render(
                &world.scene,
                &np.pose,
                &world.intrinsics,
                RenderChannels::rgb_only(),
            );
            let mean = out.alpha.data.iter().sum::<f64>() / out.alpha.data.len() as f64;
            assert!(mean > 0.5, "{}: mean alpha {mean}", np.name);
        }
    }

    #[test]
    fn world_write_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let world = generate_world(&tiny_config()).unwrap();
        write_world(dir.path(), &world).unwrap();
        let loaded = load_world(dir.path()).unwrap();
        assert_eq!(loaded.scene_gt.len(), world.scene.len());
        assert_eq!(loaded.train_poses.len(), 4);
        assert_eq!(loaded.query_poses.len(), 2);
        assert_eq!(loaded.scene_init.gaussians[0].feature, vec![0.0; 4]);
        // Poses survive the text round trip exactly.
        assert_eq!(loaded.train_poses, world.train_poses);
        let img = load_query_image(dir.path(), "query_000.png").unwrap();
        assert_eq!((img.width, img.height), (48, 36));
        assert_eq!(img.source_id.as_deref(), Some("query_000"));
    }

    #[test]
    fn write_world_twice_is_identical() {
        let world = generate_world(&tiny_config()).unwrap();
        let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_world(da.path(), &world).unwrap();
        write_world(db.path(), &world).unwrap();
        for rel in [
            "world.json",
            "scene_gt.gsplat",
            "scene_init.gsplat",
            "train/poses.txt",
            "train/view_000.png",
            "query/query_001.png",
        ] {
            let a = std::fs::read(da.path().join(rel)).unwrap();
            let b = std::fs::read(db.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs");
        }
    }
}
