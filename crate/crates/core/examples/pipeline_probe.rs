//! Scratch harness for end-to-end pipeline timing/quality at desk scale.

use std::time::Instant;

use splatpose_core::descriptors::DescriptorProvider;
use splatpose_core::distill::{train, TrainConfig, TrainView};
use splatpose_core::eval::evaluate;
use splatpose_core::geometry::Pose;
use splatpose_core::io::load_png;
use splatpose_core::refine::{localize, LocalizeConfig, Variant};
use splatpose_core::render::{render, RenderChannels};
use splatpose_core::synth::{generate_world, load_world, world_provider, write_world, SynthConfig};

fn main() {
    let t0 = Instant::now();
    let cfg = SynthConfig {
        seed: 42,
        n_gaussians: 500,
        n_views: 20,
        n_queries: 20,
        feature_dim: 16,
        width: 160,
        height: 120,
        ..Default::default()
    };
    let world = generate_world(&cfg).unwrap();
    let dir = std::env::temp_dir().join("splatpose_probe");
    let _ = std::fs::remove_dir_all(&dir);
    write_world(&dir, &world).unwrap();
    let world = load_world(&dir).unwrap();
    eprintln!("[{:?}] world written, diameter {:.3}", t0.elapsed(), world.scene_gt.diameter());

    let provider = world_provider(&world, cfg.noise_sigma, 7);
    let mut views = Vec::new();
    for np in &world.train_poses {
        let img = load_png(&dir.join("train").join(&np.name)).unwrap();
        let teacher = provider.dense_features(&img).unwrap();
        views.push(TrainView {
            image: img,
            teacher: teacher.map,
            pose: np.pose,
            intrinsics: world.intrinsics,
        });
    }
    eprintln!("[{:?}] teacher maps built", t0.elapsed());

    let train_cfg = TrainConfig {
        iterations: 3000,
        seed: 11,
        ..Default::default()
    };
    let outcome = train(&world.scene_init, &views, &train_cfg).unwrap();
    let first = outcome.history.first().unwrap();
    let last = outcome.history.last().unwrap();
    eprintln!(
        "[{:?}] trained: loss {:.4} -> {:.4} (color {:.4}->{:.4}, feat {:.4}->{:.4})",
        t0.elapsed(),
        first.loss_total,
        last.loss_total,
        first.loss_color,
        last.loss_color,
        first.loss_features,
        last.loss_features
    );
    let scene = outcome.scene;

    // Sanity: descriptor agreement between trained and GT.
    let mut cos_sum = 0.0;
    for (a, b) in scene.gaussians.iter().zip(&world.scene_gt.gaussians) {
        let dot: f64 = a.feature.iter().zip(&b.feature).map(|(x, y)| x * y).sum();
        let na: f64 = a.feature.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.feature.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na > 1e-9 && nb > 1e-9 {
            cos_sum += dot / (na * nb);
        }
    }
    eprintln!("mean descriptor cosine vs GT: {:.4}", cos_sum / scene.len() as f64);

    let loc_cfg = LocalizeConfig::default();
    let mut results: Vec<(Variant, Vec<(String, Pose)>)> = Vec::new();
    for variant in [Variant::Coarse, Variant::Base, Variant::Fine] {
        let tv = Instant::now();
        let mut estimates = Vec::new();
        for np in &world.query_poses {
            let img = load_png(&dir.join("query").join(&np.name)).unwrap();
            match localize(&img, &scene, &world.intrinsics, &provider, &loc_cfg, variant) {
                Ok(out) => estimates.push((np.name.clone(), out.pose)),
                Err(e) => {
                    eprintln!("  {} {variant}: FAILED {e}", np.name);
                    estimates.push((np.name.clone(), Pose::IDENTITY));
                }
            }
        }
        let gt: Vec<Pose> = world.query_poses.iter().map(|p| p.pose).collect();
        let report = evaluate(&estimates, &gt).unwrap();
        eprintln!(
            "[{:?}] {variant}: median {:.3} cm / {:.4} deg | pct {:?} ({:.1?} per query)",
            t0.elapsed(),
            report.median_translation_cm,
            report.median_rotation_deg,
            report.pct_within,
            tv.elapsed() / 20,
        );
        results.push((variant, estimates));
    }

    // Render a sanity PSNR of the trained scene against a GT render.
    let np = &world.query_poses[0];
    let gt_img = load_png(&dir.join("query").join(&np.name)).unwrap();
    let est_img = render(&scene, &np.pose, &world.intrinsics, RenderChannels::rgb_only())
        .rgb
        .unwrap();
    let mse: f64 = gt_img
        .data
        .iter()
        .zip(&est_img.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / gt_img.data.len() as f64;
    eprintln!("trained-render PSNR vs GT query: {:.2} dB", -10.0 * mse.log10());
    eprintln!("total {:?}", t0.elapsed());
}
