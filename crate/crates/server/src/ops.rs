//! Blocking pipeline operations behind the HTTP handlers. Each function maps
//! one endpoint onto the core crate, reading and writing workspace files.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use splatpose_core::descriptors::{DescriptorProvider, FileProvider};
use splatpose_core::distill::{train, write_loss_csv, TrainConfig, TrainView};
use splatpose_core::eval::{evaluate_named, write_report_csv};
use splatpose_core::io::{
    load_png, read_pose_file, read_scene, write_keypoints, write_pose_file, write_raster,
    write_scene, NamedPose,
};
use splatpose_core::refine::{localize, LocalizeConfig, Variant};
use splatpose_core::render::Scene;
use splatpose_core::report::{
    accuracy_curve, read_pose_trace_csv, write_curve_csv, write_pose_trace_csv, write_svg_chart,
    PoseTrace,
};
use splatpose_core::synth::{
    generate_world, load_world, world_provider, write_world, LoadedWorld, SynthConfig,
};
use splatpose_protocol as proto;

use crate::error::ApiError;

pub fn run_synth(req: &proto::SynthRequest) -> Result<proto::SynthResponse, ApiError> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        seed: req.seed,
        n_gaussians: req.n_gaussians.unwrap_or(defaults.n_gaussians),
        n_views: req.n_views.unwrap_or(defaults.n_views),
        n_queries: req.n_queries.unwrap_or(defaults.n_queries),
        feature_dim: req.feature_dim.unwrap_or(defaults.feature_dim),
        width: req.width.unwrap_or(defaults.width),
        height: req.height.unwrap_or(defaults.height),
        noise_sigma: req.noise_sigma.unwrap_or(defaults.noise_sigma),
        ..defaults
    };
    let world = generate_world(&cfg)?;
    let dir = PathBuf::from(&req.out_dir);
    write_world(&dir, &world)?;

    if req.write_teacher {
        // Dump per-view teacher maps and keypoints for the file-based path.
        let loaded = load_world(&dir)?;
        let provider = world_provider(&loaded, cfg.noise_sigma, cfg.seed);
        for np in loaded.train_poses.iter().chain(&loaded.query_poses) {
            let sub = if np.name.starts_with("query") {
                "query"
            } else {
                "train"
            };
            let img = load_png(&dir.join(sub).join(&np.name))?;
            let stem = np.name.trim_end_matches(".png");
            let dense = provider.dense_features(&img)?;
            write_raster(&dir.join(sub).join(format!("{stem}.fmap")), &dense.map)?;
            let keypoints = provider.sparse_keypoints(&img, cfg.width * cfg.height)?;
            write_keypoints(&dir.join(sub).join(format!("{stem}.kpts")), &keypoints)?;
        }
    }

    Ok(proto::SynthResponse {
        world_dir: dir.display().to_string(),
        n_gaussians: world.scene.len(),
        n_views: world.train_poses.len(),
        n_queries: world.query_poses.len(),
        feature_dim: world.scene.feature_dim,
        scene_diameter: world.scene.diameter(),
    })
}

fn build_train_views(
    world: &LoadedWorld,
    dir: &Path,
    teacher: &str,
    seed: u64,
) -> Result<Vec<TrainView>, ApiError> {
    let synthetic = world_provider(world, world.meta.config.noise_sigma, seed);
    let files = FileProvider::new(dir.join("train"), world.meta.config.feature_dim);
    let mut views = Vec::with_capacity(world.train_poses.len());
    for np in &world.train_poses {
        let image = load_png(&dir.join("train").join(&np.name))?;
        let teacher_map = match teacher {
            "synthetic" => synthetic.dense_features(&image)?,
            "files" => files.dense_features(&image)?,
            other => {
                return Err(ApiError::bad_request(format!(
                    "unknown teacher `{other}`, expected synthetic|files"
                )))
            }
        };
        views.push(TrainView {
            image,
            teacher: teacher_map.map,
            pose: np.pose,
            intrinsics: world.intrinsics,
        });
    }
    Ok(views)
}

pub fn run_train(req: &proto::TrainRequest) -> Result<proto::TrainResponse, ApiError> {
    let dir = PathBuf::from(&req.world_dir);
    let world = load_world(&dir)?;
    let teacher = req.teacher.as_deref().unwrap_or("synthetic");
    let views = build_train_views(&world, &dir, teacher, req.seed)?;

    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        iterations: req.iterations.unwrap_or(defaults.iterations),
        lambda: req.lambda.unwrap_or(defaults.lambda),
        lr_color: req.lr_color.unwrap_or(defaults.lr_color),
        lr_opacity: req.lr_opacity.unwrap_or(defaults.lr_opacity),
        lr_feature: req.lr_feature.unwrap_or(defaults.lr_feature),
        seed: req.seed,
        ..defaults
    };
    let outcome = train(&world.scene_init, &views, &cfg)?;

    let scene_path = req
        .scene_out
        .clone()
        .unwrap_or_else(|| dir.join("trained.gsplat").display().to_string());
    let loss_path = req
        .loss_csv_out
        .clone()
        .unwrap_or_else(|| dir.join("loss.csv").display().to_string());
    write_scene(Path::new(&scene_path), &outcome.scene)?;
    write_loss_csv(Path::new(&loss_path), &outcome.history)
        .map_err(|e| ApiError::internal(format!("writing {loss_path}: {e}")))?;

    Ok(proto::TrainResponse {
        scene_path,
        loss_csv: loss_path,
        iterations: cfg.iterations,
        initial_loss: outcome.history.first().map_or(0.0, |r| r.loss_total),
        final_loss: outcome.history.last().map_or(0.0, |r| r.loss_total),
    })
}

pub struct LoadedScene {
    pub id: String,
    pub scene: Arc<Scene>,
}

pub fn load_scene_file(path: &str) -> Result<Scene, ApiError> {
    Ok(read_scene(Path::new(path))?)
}

#[allow(clippy::too_many_arguments)]
pub fn run_localize(
    scene: Arc<Scene>,
    req: &proto::LocalizeRequest,
) -> Result<proto::LocalizeResponse, ApiError> {
    let variant: Variant = req
        .variant
        .parse()
        .map_err(|e: String| ApiError::bad_request(e))?;
    let dir = PathBuf::from(&req.world_dir);
    let world = load_world(&dir)?;
    let noise = req.noise_sigma.unwrap_or(world.meta.config.noise_sigma);
    let provider = world_provider(&world, noise, req.seed);

    let mut config = LocalizeConfig::default();
    config.coarse.ransac.seed = req.seed;
    if let Some(k) = req.keypoints {
        config.coarse.keypoints = k;
        config.refine.keypoints = k;
    }
    if let Some(iters) = req.ransac_iterations {
        config.coarse.ransac.iterations = iters;
    }
    if let Some(t) = req.ransac_threshold_px {
        config.coarse.ransac.threshold_px = t;
    }
    if let Some(iters) = req.warp_iterations {
        config.refine.iterations = iters;
    }
    if let Some(lr) = req.warp_lr {
        config.refine.lr = lr;
    }
    if let Some(rounds) = req.feature_rounds {
        config.refine.feature_rounds = rounds;
    }

    let names: Vec<String> = if req.queries.is_empty() {
        world.query_poses.iter().map(|p| p.name.clone()).collect()
    } else {
        req.queries.clone()
    };

    if let Some(traces_dir) = &req.traces_out {
        std::fs::create_dir_all(traces_dir)
            .map_err(|e| ApiError::internal(format!("creating {traces_dir}: {e}")))?;
    }

    let mut results = Vec::with_capacity(names.len());
    let mut estimates = Vec::with_capacity(names.len());
    for name in &names {
        let started = Instant::now();
        let image = load_png(&dir.join("query").join(name))?;
        let outcome = localize(&image, &scene, &world.intrinsics, &provider, &config, variant)?;
        if let (Some(traces_dir), Some(warp)) = (&req.traces_out, &outcome.warp) {
            let stem = name.trim_end_matches(".png");
            write_pose_trace_csv(
                &Path::new(traces_dir).join(format!("trace_{stem}.csv")),
                &warp.trace,
                &warp.poses,
            )
            .map_err(|e| ApiError::internal(format!("writing trace for {name}: {e}")))?;
        }
        estimates.push(NamedPose {
            name: name.clone(),
            pose: outcome.pose,
        });
        results.push(proto::QueryResult {
            name: name.clone(),
            pose: outcome.pose.into(),
            correspondences: outcome.coarse.correspondences.len(),
            inliers: outcome.coarse.inlier_count,
            warp_initial_loss: outcome.warp.as_ref().map(|w| w.initial_loss),
            warp_final_loss: outcome.warp.as_ref().map(|w| w.best_loss),
            elapsed_ms: started.elapsed().as_millis() as u64,
        });
    }

    let estimates_path = match &req.estimates_out {
        Some(path) => {
            write_pose_file(Path::new(path), &estimates)?;
            Some(path.clone())
        }
        None => None,
    };

    Ok(proto::LocalizeResponse {
        variant: variant.to_string(),
        results,
        estimates_path,
    })
}

pub fn run_eval(req: &proto::EvalRequest) -> Result<proto::EvalResponse, ApiError> {
    let estimates = read_pose_file(Path::new(&req.estimates_path))?;
    let ground_truth = read_pose_file(Path::new(&req.ground_truth_path))?;
    let report = evaluate_named(&estimates, &ground_truth)?;
    let report_csv = match &req.report_csv_out {
        Some(path) => {
            write_report_csv(Path::new(path), &report)
                .map_err(|e| ApiError::internal(format!("writing {path}: {e}")))?;
            Some(path.clone())
        }
        None => None,
    };
    Ok(proto::EvalResponse { report, report_csv })
}

pub fn run_report(req: &proto::ReportRequest) -> Result<proto::ReportResponse, ApiError> {
    let dir = PathBuf::from(&req.traces_dir);
    let mut traces = Vec::new();
    let entries = std::fs::read_dir(&dir)
        .map_err(|e| ApiError::bad_request(format!("reading {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trace_") && n.ends_with(".csv"))
        })
        .collect();
    paths.sort();
    for path in paths {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .trim_start_matches("trace_")
            .to_string();
        let points = read_pose_trace_csv(&path)?;
        traces.push(PoseTrace { name: stem, points });
    }
    if traces.is_empty() {
        return Err(ApiError::bad_request(format!(
            "no trace_*.csv files in {}",
            dir.display()
        )));
    }
    let ground_truth = read_pose_file(Path::new(&req.ground_truth_path))?;
    let curve = accuracy_curve(
        &traces,
        &ground_truth,
        req.threshold_cm.unwrap_or(1.0),
        req.threshold_deg.unwrap_or(1.0),
    );
    write_curve_csv(Path::new(&req.curve_csv_out), &curve)
        .map_err(|e| ApiError::internal(format!("writing {}: {e}", req.curve_csv_out)))?;

    let svg = match &req.svg_out {
        Some(path) => {
            let pct: Vec<(f64, f64)> = curve
                .iter()
                .map(|p| (p.iteration as f64, p.pct_within))
                .collect();
            let med: Vec<(f64, f64)> = curve
                .iter()
                .map(|p| (p.iteration as f64, p.median_translation_cm))
                .collect();
            write_svg_chart(
                Path::new(path),
                "accuracy vs refinement iteration",
                &[("pct within threshold", pct), ("median translation (cm)", med)],
            )
            .map_err(|e| ApiError::internal(format!("writing {path}: {e}")))?;
            Some(path.clone())
        }
        None => None,
    };

    Ok(proto::ReportResponse {
        curve_csv: req.curve_csv_out.clone(),
        svg,
        queries: traces.len(),
        final_pct_within: curve.last().map_or(0.0, |p| p.pct_within),
    })
}
