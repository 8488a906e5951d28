//! Pose-accuracy metrics: per-query translation (cm) and rotation (degrees)
//! errors, lower medians, and the fraction of frames under nested
//! threshold pairs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_error_deg, translation_error_m, Pose};
use crate::io::NamedPose;

/// Accuracy buckets: (translation cm, rotation degrees).
pub const THRESHOLDS: [(f64, f64); 4] = [(10.0, 5.0), (5.0, 5.0), (2.0, 2.0), (1.0, 1.0)];

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("estimate/ground-truth length mismatch: {estimates} vs {ground_truth}")]
    LengthMismatch {
        estimates: usize,
        ground_truth: usize,
    },
    #[error("no ground-truth pose named `{0}`")]
    MissingGroundTruth(String),
    #[error("cannot evaluate an empty estimate list")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryError {
    pub name: String,
    pub translation_cm: f64,
    pub rotation_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_query: Vec<QueryError>,
    pub median_translation_cm: f64,
    pub median_rotation_deg: f64,
    /// Percentage of frames within each of [`THRESHOLDS`], in order.
    pub pct_within: [f64; 4],
}

/// Lower median: element at index (n-1)/2 of the sorted values.
fn lower_median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[(sorted.len() - 1) / 2]
}

pub fn pose_errors(estimate: &Pose, ground_truth: &Pose) -> (f64, f64) {
    (
        translation_error_m(estimate, ground_truth) * 100.0,
        rotation_error_deg(estimate, ground_truth),
    )
}

/// Scores estimates against ground truth, paired by order.
pub fn evaluate(estimates: &[(String, Pose)], ground_truth: &[Pose]) -> Result<EvalReport, EvalError> {
    if estimates.len() != ground_truth.len() {
        return Err(EvalError::LengthMismatch {
            estimates: estimates.len(),
            ground_truth: ground_truth.len(),
        });
    }
    if estimates.is_empty() {
        return Err(EvalError::Empty);
    }
    let per_query: Vec<QueryError> = estimates
        .iter()
        .zip(ground_truth)
        .map(|((name, est), gt)| {
            let (translation_cm, rotation_deg) = pose_errors(est, gt);
            QueryError {
                name: name.clone(),
                translation_cm,
                rotation_deg,
            }
        })
        .collect();

    let trans: Vec<f64> = per_query.iter().map(|q| q.translation_cm).collect();
    let rot: Vec<f64> = per_query.iter().map(|q| q.rotation_deg).collect();
    let n = per_query.len() as f64;
    let mut pct_within = [0.0; 4];
    for (i, (t_cm, r_deg)) in THRESHOLDS.iter().enumerate() {
        let hits = per_query
            .iter()
            .filter(|q| q.translation_cm < *t_cm && q.rotation_deg < *r_deg)
            .count();
        pct_within[i] = 100.0 * hits as f64 / n;
    }

    Ok(EvalReport {
        median_translation_cm: lower_median(&trans),
        median_rotation_deg: lower_median(&rot),
        per_query,
        pct_within,
    })
}

/// Joins name-keyed estimates against a ground-truth pose list and scores
/// them. Every estimate must have a ground-truth entry of the same name.
pub fn evaluate_named(
    estimates: &[NamedPose],
    ground_truth: &[NamedPose],
) -> Result<EvalReport, EvalError> {
    if estimates.len() != ground_truth.len() {
        return Err(EvalError::LengthMismatch {
            estimates: estimates.len(),
            ground_truth: ground_truth.len(),
        });
    }
    let mut pairs = Vec::with_capacity(estimates.len());
    let mut gts = Vec::with_capacity(estimates.len());
    for est in estimates {
        let gt = ground_truth
            .iter()
            .find(|g| g.name == est.name)
            .ok_or_else(|| EvalError::MissingGroundTruth(est.name.clone()))?;
        pairs.push((est.name.clone(), est.pose));
        gts.push(gt.pose);
    }
    evaluate(&pairs, &gts)
}

/// CSV report: a summary block then one row per query.
pub fn write_report_csv(path: &std::path::Path, report: &EvalReport) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str("metric,value\n");
    out.push_str(&format!(
        "median_translation_cm,{}\n",
        report.median_translation_cm
    ));
    out.push_str(&format!("median_rotation_deg,{}\n", report.median_rotation_deg));
    for (i, (t, r)) in THRESHOLDS.iter().enumerate() {
        out.push_str(&format!("pct_{t}cm_{r}deg,{}\n", report.pct_within[i]));
    }
    out.push_str("\nname,translation_cm,rotation_deg\n");
    for q in &report.per_query {
        out.push_str(&format!("{},{},{}\n", q.name, q.translation_cm, q.rotation_deg));
    }
    std::fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quat;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose_at(t: Vector3<f64>, axis: Vector3<f64>, angle_deg: f64) -> Pose {
        Pose::new(Quat::from_axis_angle(&axis, angle_deg.to_radians()), t)
    }

    #[test]
    fn exact_estimates_score_perfectly() {
        let gt = vec![
            Pose::IDENTITY,
            pose_at(Vector3::new(1.0, 0.0, 2.0), Vector3::new(0.0, 1.0, 0.0), 30.0),
        ];
        let est: Vec<(String, Pose)> = gt
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("q{i}"), *p))
            .collect();
        let report = evaluate(&est, &gt).unwrap();
        assert_eq!(report.median_translation_cm, 0.0);
        assert_eq!(report.median_rotation_deg, 0.0);
        assert_eq!(report.pct_within, [100.0; 4]);
    }

    #[test]
    fn mixed_buckets_count_directly() {
        // One frame exact, one at 3 cm / 3 deg: 5cm/5deg holds both, 2cm/2deg
        // only the exact one.
        let gt = vec![Pose::IDENTITY, Pose::IDENTITY];
        let offset = pose_at(
            Vector3::new(0.03, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            3.0,
        );
        let est = vec![
            ("a".to_string(), Pose::IDENTITY),
            ("b".to_string(), offset),
        ];
        let report = evaluate(&est, &gt).unwrap();
        assert_eq!(report.pct_within[0], 100.0);
        assert_eq!(report.pct_within[1], 100.0);
        assert_eq!(report.pct_within[2], 50.0);
        assert_eq!(report.pct_within[3], 50.0);
        // Lower median of {0, 3} cm.
        assert!(report.median_translation_cm < 1e-9);
    }

    #[test]
    fn matches_brute_force_metric_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let mut gt = Vec::new();
        let mut est = Vec::new();
        for i in 0..9 {
            let base = pose_at(
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen(), rng.gen_range(1.0..3.0)),
                Vector3::new(rng.gen_range(-1.0..1.0), 1.0, rng.gen_range(-1.0..1.0)),
                rng.gen_range(-40.0..40.0),
            );
            let delta = pose_at(
                Vector3::new(
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                ),
                Vector3::new(0.3, 1.0, -0.2),
                rng.gen_range(-4.0..4.0),
            );
            gt.push(base);
            est.push((format!("q{i}"), crate::geometry::compose(&delta, &base)));
        }
        let report = evaluate(&est, &gt).unwrap();

        // Independent recomputation.
        let mut trans: Vec<f64> = Vec::new();
        for ((_, e), g) in est.iter().zip(&gt) {
            let ce = e.camera_center();
            let cg = g.camera_center();
            trans.push((ce - cg).norm() * 100.0);
        }
        let mut sorted = trans.clone();
        sorted.sort_by(f64::total_cmp);
        assert!((report.median_translation_cm - sorted[4]).abs() < 1e-12);
        for (q, t) in report.per_query.iter().zip(&trans) {
            assert!((q.translation_cm - t).abs() < 1e-12);
        }
        // Monotone buckets.
        for w in report.pct_within.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let gt = vec![Pose::IDENTITY];
        let est = vec![
            ("a".to_string(), Pose::IDENTITY),
            ("b".to_string(), Pose::IDENTITY),
        ];
        assert!(matches!(
            evaluate(&est, &gt),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn named_join_finds_pairs_by_name() {
        let gt = vec![
            NamedPose {
                name: "a".into(),
                pose: Pose::IDENTITY,
            },
            NamedPose {
                name: "b".into(),
                pose: pose_at(Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 1.0, 0.0), 10.0),
            },
        ];
        let est = vec![gt[1].clone(), gt[0].clone()];
        let report = evaluate_named(&est, &gt).unwrap();
        assert_eq!(report.median_translation_cm, 0.0);
        assert!(matches!(
            evaluate_named(
                &[NamedPose { name: "zz".into(), pose: Pose::IDENTITY }],
                &gt[..1]
            ),
            Err(EvalError::MissingGroundTruth(_))
        ));
    }
}
