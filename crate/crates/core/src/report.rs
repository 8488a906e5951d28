//! Run reports: per-iteration pose traces, accuracy-vs-iteration curves and
//! small self-contained SVG line charts.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::eval::pose_errors;
use crate::geometry::{Pose, Quat};
use crate::io::{IoError, NamedPose};
use crate::refine::WarpTracePoint;

/// One pose trace: refinement loss and pose per iteration for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrace {
    pub name: String,
    pub points: Vec<(usize, f64, Pose)>,
}

/// Writes `iteration,loss,qw,qx,qy,qz,tx,ty,tz` rows.
pub fn write_pose_trace_csv(
    path: &Path,
    trace: &[WarpTracePoint],
    poses: &[Pose],
) -> std::io::Result<()> {
    let mut out = String::from("iteration,loss,qw,qx,qy,qz,tx,ty,tz\n");
    for (t, p) in trace.iter().zip(poses) {
        let (q, tr) = (p.rotation, p.translation);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            t.iteration, t.loss, q.w, q.x, q.y, q.z, tr.x, tr.y, tr.z
        ));
    }
    std::fs::write(path, out)
}

pub fn read_pose_trace_csv(path: &Path) -> Result<Vec<(usize, f64, Pose)>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with("iteration") || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(IoError::parse(
                path,
                lineno,
                format!("expected 9 comma-separated fields, got {}", fields.len()),
            ));
        }
        let iteration: usize = fields[0]
            .parse()
            .map_err(|_| IoError::parse(path, lineno, "bad iteration"))?;
        let mut vals = [0.0f64; 8];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = fields[i + 1]
                .parse()
                .map_err(|_| IoError::parse(path, lineno, format!("bad float `{}`", fields[i + 1])))?;
        }
        points.push((
            iteration,
            vals[0],
            Pose::new(
                Quat::new(vals[1], vals[2], vals[3], vals[4]),
                Vector3::new(vals[5], vals[6], vals[7]),
            ),
        ));
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Percentage of queries within the threshold pair at this iteration.
    pub pct_within: f64,
    pub median_translation_cm: f64,
    pub median_rotation_deg: f64,
}

/// Accuracy-vs-iteration over a set of traces: at each iteration a query
/// contributes its pose at that iteration (or its last one once finished).
pub fn accuracy_curve(
    traces: &[PoseTrace],
    ground_truth: &[NamedPose],
    threshold_cm: f64,
    threshold_deg: f64,
) -> Vec<CurvePoint> {
    let max_len = traces.iter().map(|t| t.points.len()).max().unwrap_or(0);
    let mut curve = Vec::with_capacity(max_len);
    for i in 0..max_len {
        let mut trans = Vec::new();
        let mut rots = Vec::new();
        let mut hits = 0usize;
        let mut total = 0usize;
        for trace in traces {
            if trace.points.is_empty() {
                continue;
            }
            let stem = trace.name.trim_end_matches(".png");
            let Some(gt) = ground_truth
                .iter()
                .find(|g| g.name.trim_end_matches(".png") == stem)
            else {
                continue;
            };
            let (_, _, pose) = trace.points[i.min(trace.points.len() - 1)];
            let (t_cm, r_deg) = pose_errors(&pose, &gt.pose);
            if t_cm < threshold_cm && r_deg < threshold_deg {
                hits += 1;
            }
            trans.push(t_cm);
            rots.push(r_deg);
            total += 1;
        }
        if total == 0 {
            break;
        }
        trans.sort_by(f64::total_cmp);
        rots.sort_by(f64::total_cmp);
        curve.push(CurvePoint {
            iteration: i,
            pct_within: 100.0 * hits as f64 / total as f64,
            median_translation_cm: trans[(trans.len() - 1) / 2],
            median_rotation_deg: rots[(rots.len() - 1) / 2],
        });
    }
    curve
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> std::io::Result<()> {
    let mut out = String::from("iteration,pct_within,median_translation_cm,median_rotation_deg\n");
    for p in curve {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.iteration, p.pct_within, p.median_translation_cm, p.median_rotation_deg
        ));
    }
    std::fs::write(path, out)
}

/// Minimal SVG polyline chart; series share the x axis.
pub fn write_svg_chart(
    path: &Path,
    title: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> std::io::Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let mut x_max = 1e-12f64;
    let mut y_max = 1e-12f64;
    for (_, pts) in series {
        for &(x, y) in pts {
            x_max = x_max.max(x);
            y_max = y_max.max(y);
        }
    }
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>
<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>
"#,
        W / 2.0,
        H - M,
        W - M,
        H - M,
        H - M,
    );
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = colors[si % colors.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let px = M + (x / x_max) * (W - 2.0 * M);
                let py = (H - M) - (y / y_max) * (H - 2.0 * M);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        svg.push_str(&format!(
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>
<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{name}</text>
"#,
            coords.join(" "),
            W - M - 150.0,
            M + 16.0 * si as f64,
        ));
    }
    svg.push_str(&format!(
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">iteration</text>
<text x="12" y="{}" font-family="sans-serif" font-size="12" transform="rotate(-90 12 {})">value (max {y_max:.3})</text>
</svg>
"#,
        W / 2.0,
        H - 12.0,
        H / 2.0,
        H / 2.0,
    ));
    std::fs::write(path, svg)
}
