//! Odometry metrics and report/plot export.
//!
//! * [`rmse_relative`]: RMSE of per-pair relative pose vectors (`t_rel` in
//!   meters, `r_rel` in radians over wrapped Euler components).
//! * [`kitti_drift`]: the KITTI odometry segment protocol. For every start
//!   frame and every segment length 100, 200, … 800 m of ground-truth path,
//!   the end frame is the first one whose accumulated path length exceeds the
//!   start's by the segment length. Each segment contributes
//!   `‖t(E)‖ / L` and `angle(R(E)) / L` with `E = inv(ΔT_pred) · ΔT_gt`.
//!   Results are averaged over all segments and reported in percent and deg/m.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use crate::pose::{compose, invert, relative_pose, wrap_angle, Pose, PoseVector6};

pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions but {truths} ground-truth entries")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("trajectory path length {path_length:.1} m is shorter than the smallest segment")]
    TrajectoryTooShort { path_length: f64 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {reason}")]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseReport {
    /// Translation RMSE, meters.
    pub t_rel: f64,
    /// Orientation RMSE over wrapped Euler components, radians.
    pub r_rel: f64,
    pub pairs: usize,
}

pub fn rmse_relative(
    preds: &[PoseVector6],
    truths: &[PoseVector6],
) -> Result<RmseReport, EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut st, mut sr) = (0.0, 0.0);
    for (a, b) in preds.iter().zip(truths) {
        st += (a.p - b.p).norm_squared();
        sr += (0..3)
            .map(|i| wrap_angle(a.q[i] - b.q[i]).powi(2))
            .sum::<f64>();
    }
    let n = preds.len() as f64;
    Ok(RmseReport {
        t_rel: (st / n).sqrt(),
        r_rel: (sr / n).sqrt(),
        pairs: preds.len(),
    })
}

/// Averages over the segments of one length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentStats {
    pub length: f64,
    pub count: usize,
    /// Translation error per meter (fraction, not percent).
    pub t_err: f64,
    /// Rotation error, radians per meter.
    pub r_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    /// Mean translational drift, percent of segment length.
    pub translation_pct: f64,
    /// Mean rotational drift, degrees per meter.
    pub rotation_deg_per_m: f64,
    pub segment_count: usize,
    /// Per-length breakdown; lengths with no fitting segment are omitted.
    pub by_length: Vec<SegmentStats>,
}

/// Cumulative ground-truth path length at each frame.
pub fn path_distances(traj: &[Pose]) -> Vec<f64> {
    let mut d = Vec::with_capacity(traj.len());
    let mut acc = 0.0;
    for (i, p) in traj.iter().enumerate() {
        if i > 0 {
            acc += (p.translation() - traj[i - 1].translation()).norm();
        }
        d.push(acc);
    }
    d
}

/// Rotation angle from the trace, with the cosine clamped to [−1, 1].
fn trace_angle(p: &Pose) -> f64 {
    let r = p.rotation();
    let c = 0.5 * (r.trace() - 1.0);
    c.clamp(-1.0, 1.0).acos()
}

pub fn kitti_drift(pred: &[Pose], gt: &[Pose]) -> Result<DriftReport, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            preds: pred.len(),
            truths: gt.len(),
        });
    }
    if gt.len() < 2 {
        return Err(EvalError::Empty);
    }
    let dist = path_distances(gt);
    let mut by_length = Vec::new();
    let (mut t_sum, mut r_sum, mut count) = (0.0, 0.0, 0usize);
    for &len in &SEGMENT_LENGTHS {
        let (mut ts, mut rs, mut n) = (0.0, 0.0, 0usize);
        let mut last = 0;
        for first in 0..gt.len() {
            // end frame index is monotone in the start frame
            last = last.max(first);
            while last < gt.len() && dist[last] <= dist[first] + len {
                last += 1;
            }
            if last == gt.len() {
                break;
            }
            let d_gt = relative_pose(&gt[first], &gt[last]);
            let d_pred = relative_pose(&pred[first], &pred[last]);
            n += 1;
            if d_pred == d_gt {
                continue;
            }
            let err = compose(&invert(&d_pred), &d_gt);
            ts += err.translation().norm() / len;
            rs += trace_angle(&err) / len;
        }
        if n > 0 {
            by_length.push(SegmentStats {
                length: len,
                count: n,
                t_err: ts / n as f64,
                r_err: rs / n as f64,
            });
            t_sum += ts;
            r_sum += rs;
            count += n;
        }
    }
    if count == 0 {
        return Err(EvalError::TrajectoryTooShort {
            path_length: *dist.last().unwrap(),
        });
    }
    Ok(DriftReport {
        translation_pct: 100.0 * t_sum / count as f64,
        rotation_deg_per_m: (r_sum / count as f64).to_degrees(),
        segment_count: count,
        by_length,
    })
}

/// Fixed-width RMSE table, one row per labelled report.
pub fn format_rmse_table(rows: &[(&str, &RmseReport)]) -> String {
    let mut s = format!(
        "{:<12} {:>8} {:>12} {:>12}\n",
        "sequence", "pairs", "t_rel [m]", "r_rel [rad]"
    );
    for (name, r) in rows {
        writeln!(
            s,
            "{:<12} {:>8} {:>12.4} {:>12.4}",
            name, r.pairs, r.t_rel, r.r_rel
        )
        .unwrap();
    }
    s
}

pub fn format_rmse_csv(rows: &[(&str, &RmseReport)]) -> String {
    let mut s = String::from("sequence,pairs,t_rel_m,r_rel_rad\n");
    for (name, r) in rows {
        writeln!(s, "{},{},{},{}", name, r.pairs, r.t_rel, r.r_rel).unwrap();
    }
    s
}

pub fn format_drift_table(rows: &[(&str, &DriftReport)]) -> String {
    let mut s = format!(
        "{:<12} {:>9} {:>12} {:>14}\n",
        "sequence", "segments", "t_drift [%]", "r_drift [deg/m]"
    );
    for (name, r) in rows {
        writeln!(
            s,
            "{:<12} {:>9} {:>12.4} {:>14.4}",
            name, r.segment_count, r.translation_pct, r.rotation_deg_per_m
        )
        .unwrap();
    }
    s
}

pub fn format_drift_csv(rows: &[(&str, &DriftReport)]) -> String {
    let mut s = String::from("sequence,segments,t_drift_pct,r_drift_deg_per_m\n");
    for (name, r) in rows {
        writeln!(
            s,
            "{},{},{},{}",
            name, r.segment_count, r.translation_pct, r.rotation_deg_per_m
        )
        .unwrap();
    }
    s
}

fn write_file(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn trajectory_csv(traj: &[Pose]) -> String {
    let mut s = String::from("frame,x,y,z\n");
    for (i, p) in traj.iter().enumerate() {
        let t = p.translation();
        writeln!(s, "{},{},{},{}", i, t.x, t.y, t.z).unwrap();
    }
    s
}

pub fn export_trajectory_csv(path: &Path, traj: &[Pose]) -> Result<(), EvalError> {
    write_file(path, &trajectory_csv(traj))
}

/// Positions from a `frame,x,y,z` file.
pub fn parse_trajectory_csv(text: &str, path: &Path) -> Result<Vec<Vector3<f64>>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| EvalError::Format {
            path: path.to_path_buf(),
            line: i + 1,
            reason: reason.into(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let v: Vec<f64> = f[1..]
            .iter()
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("not a number"))?;
        out.push(Vector3::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

/// Top-down (x–z plane) plot: ground truth solid, prediction dashed. Points
/// are `(x, −z)` in SVG user space so forward motion points up.
pub fn trajectory_svg(pred: &[Pose], gt: &[Pose]) -> String {
    let pts = |t: &[Pose]| -> Vec<(f64, f64)> {
        t.iter()
            .map(|p| (p.translation().x, -p.translation().z))
            .collect()
    };
    let (pp, gp) = (pts(pred), pts(gt));
    let all: Vec<&(f64, f64)> = pp.iter().chain(&gp).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    if let Some(first) = all.first() {
        (x0, x1, y0, y1) = (first.0, first.0, first.1, first.1);
    }
    for (x, y) in &all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1.0);
    let margin = 0.05 * span;
    let (vx, vy, vw, vh) = (
        x0 - margin,
        y0 - margin,
        x1 - x0 + 2.0 * margin,
        y1 - y0 + 2.0 * margin + 0.12 * span,
    );
    let stroke = 0.004 * span;
    let poly = |p: &[(f64, f64)]| {
        p.iter()
            .map(|(x, y)| format!("{x:.4},{y:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{vx:.4} {vy:.4} {vw:.4} {vh:.4}">"#
    )
    .unwrap();
    writeln!(s, r#"  <polyline id="ground-truth" fill="none" stroke="black" stroke-width="{stroke:.4}" points="{}"/>"#, poly(&gp)).unwrap();
    writeln!(
        s,
        r#"  <polyline id="prediction" fill="none" stroke="red" stroke-dasharray="{:.4}" stroke-width="{stroke:.4}" points="{}"/>"#,
        4.0 * stroke,
        poly(&pp)
    )
    .unwrap();
    let (lx, ly, fs) = (x0, y1 + margin + 0.04 * span, 0.035 * span);
    writeln!(
        s,
        r#"  <text x="{lx:.4}" y="{ly:.4}" font-size="{fs:.4}" fill="black">ground truth</text>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"  <text x="{lx:.4}" y="{:.4}" font-size="{fs:.4}" fill="red">prediction</text>"#,
        ly + 1.3 * fs
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

pub fn export_trajectory_svg(path: &Path, pred: &[Pose], gt: &[Pose]) -> Result<(), EvalError> {
    write_file(path, &trajectory_svg(pred, gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{integrate_trajectory, vec6_to_pose, EulerConvention};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CONV: EulerConvention = EulerConvention::ZYX_INTRINSIC;

    fn v(p: [f64; 3], q: [f64; 3]) -> PoseVector6 {
        PoseVector6::new(Vector3::from(p), Vector3::from(q))
    }

    fn random_steps(rng: &mut ChaCha8Rng, n: usize) -> Vec<PoseVector6> {
        (0..n)
            .map(|_| {
                v(
                    [
                        rng.random_range(0.5..1.5),
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.05..0.05),
                    ],
                    [
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.05..0.05),
                    ],
                )
            })
            .collect()
    }

    #[test]
    fn rmse_examples() {
        let truths = vec![v([0.5, 0.0, 0.0], [0.0, 0.0, 0.1]); 3];
        assert_eq!(
            rmse_relative(&truths, &truths).unwrap(),
            RmseReport {
                t_rel: 0.0,
                r_rel: 0.0,
                pairs: 3
            }
        );
        let r = rmse_relative(&[v([3.0, 4.0, 0.0], [0.0; 3])], &[PoseVector6::zeros()]).unwrap();
        assert_eq!(r.t_rel, 5.0);
        assert_eq!(r.r_rel, 0.0);
        assert!(matches!(rmse_relative(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(
            rmse_relative(&truths, &truths[..1]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn rmse_wraps_angles_and_ignores_order() {
        let tau = std::f64::consts::TAU;
        // bypass PoseVector6::new's own wrapping
        let mut shifted = v([0.0; 3], [0.1, -0.2, 3.0]);
        shifted.q += Vector3::new(tau, -tau, tau);
        assert!(
            rmse_relative(&[shifted], &[v([0.0; 3], [0.1, -0.2, 3.0])])
                .unwrap()
                .r_rel
                < 1e-12
        );

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_steps(&mut rng, 20);
        let b = random_steps(&mut rng, 20);
        let r1 = rmse_relative(&a, &b).unwrap();
        let (mut ar, mut br) = (a.clone(), b.clone());
        ar.reverse();
        br.reverse();
        let r2 = rmse_relative(&ar, &br).unwrap();
        assert!((r1.t_rel - r2.t_rel).abs() < 1e-12 && (r1.r_rel - r2.r_rel).abs() < 1e-12);
    }

    #[test]
    fn drift_of_identical_trajectories_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let traj = integrate_trajectory(&Pose::identity(), &random_steps(&mut rng, 600), CONV);
        let r = kitti_drift(&traj, &traj).unwrap();
        assert_eq!(r.translation_pct, 0.0);
        assert_eq!(r.rotation_deg_per_m, 0.0);
        assert!(r.segment_count > 0);
    }

    #[test]
    fn drift_is_invariant_to_shared_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = integrate_trajectory(&Pose::identity(), &random_steps(&mut rng, 500), CONV);
        let pred = integrate_trajectory(&Pose::identity(), &random_steps(&mut rng, 500), CONV);
        let g = vec6_to_pose(&v([10.0, -4.0, 2.0], [0.3, -0.2, 1.1]), CONV);
        let moved = |t: &[Pose]| t.iter().map(|p| compose(&g, p)).collect::<Vec<_>>();
        let a = kitti_drift(&pred, &gt).unwrap();
        let b = kitti_drift(&moved(&pred), &moved(&gt)).unwrap();
        assert!((a.translation_pct - b.translation_pct).abs() < 1e-9);
        assert!((a.rotation_deg_per_m - b.rotation_deg_per_m).abs() < 1e-9);
    }

    #[test]
    fn constant_bias_drift_matches_closed_form() {
        let s = 1.0;
        let b = Vector3::new(0.0, 0.02, 0.01);
        let gt = integrate_trajectory(
            &Pose::identity(),
            &vec![v([s, 0.0, 0.0], [0.0; 3]); 1000],
            CONV,
        );
        let pred = integrate_trajectory(
            &Pose::identity(),
            &vec![v([s + b.x, b.y, b.z], [0.0; 3]); 1000],
            CONV,
        );
        let r = kitti_drift(&pred, &gt).unwrap();
        let expected = b.norm() / s;
        for seg in r.by_length.iter().filter(|x| x.length >= 400.0) {
            assert!((seg.t_err - expected).abs() / expected < 0.05, "{seg:?}");
        }
        assert!(r.rotation_deg_per_m.abs() < 1e-12);
    }

    #[test]
    fn short_trajectory_is_flagged() {
        let traj = integrate_trajectory(
            &Pose::identity(),
            &vec![v([1.0, 0.0, 0.0], [0.0; 3]); 50],
            CONV,
        );
        assert!(matches!(
            kitti_drift(&traj, &traj),
            Err(EvalError::TrajectoryTooShort { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let traj = integrate_trajectory(&Pose::identity(), &random_steps(&mut rng, 30), CONV);
        let back = parse_trajectory_csv(&trajectory_csv(&traj), Path::new("t.csv")).unwrap();
        assert_eq!(back.len(), traj.len());
        for (a, b) in back.iter().zip(&traj) {
            assert!((a - b.translation()).norm() < 1e-9);
        }
        assert_eq!(
            trajectory_csv(&[Pose::identity()]),
            "frame,x,y,z\n0,0,0,0\n"
        );
    }

    #[test]
    fn svg_straight_line_is_collinear() {
        let traj: Vec<Pose> = (0..10)
            .map(|i| Pose::from_translation(Vector3::new(i as f64, 0.0, 2.0 * i as f64)))
            .collect();
        let svg = trajectory_svg(&traj, &traj);
        let line = svg.lines().find(|l| l.contains("ground-truth")).unwrap();
        let pts: Vec<(f64, f64)> = line
            .split("points=\"")
            .nth(1)
            .unwrap()
            .trim_end_matches("\"/>")
            .split(' ')
            .map(|p| {
                let (x, y) = p.split_once(',').unwrap();
                (x.parse().unwrap(), y.parse().unwrap())
            })
            .collect();
        assert_eq!(pts.len(), 10);
        let (a, b) = (pts[0], pts[9]);
        for p in &pts {
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            assert!(cross.abs() < 1e-3);
        }
        assert!(svg.contains("prediction") && svg.contains("ground truth"));
    }

    #[test]
    fn paper_reference_values_format() {
        // DeepPCO test-set RMSE and seq-04 drift against LOAM, as published
        let s04 = RmseReport {
            t_rel: 0.0263,
            r_rel: 0.0305,
            pairs: 270,
        };
        let s10 = RmseReport {
            t_rel: 0.0247,
            r_rel: 0.0659,
            pairs: 1200,
        };
        assert_eq!(
            format_rmse_table(&[("04", &s04), ("10", &s10)]),
            "sequence        pairs    t_rel [m]  r_rel [rad]\n\
             04                270       0.0263       0.0305\n\
             10               1200       0.0247       0.0659\n"
        );
        assert_eq!(
            format_rmse_csv(&[("04", &s04)]),
            "sequence,pairs,t_rel_m,r_rel_rad\n04,270,0.0263,0.0305\n"
        );
        let loam = DriftReport {
            translation_pct: 2.3245,
            rotation_deg_per_m: 0.0108,
            segment_count: 0,
            by_length: vec![],
        };
        let deep = DriftReport {
            translation_pct: 3.1012,
            rotation_deg_per_m: 0.0177,
            segment_count: 0,
            by_length: vec![],
        };
        assert_eq!(
            format_drift_table(&[("loam-04", &loam), ("deeppco-04", &deep)]),
            "sequence      segments  t_drift [%] r_drift [deg/m]\n\
             loam-04              0       2.3245         0.0108\n\
             deeppco-04           0       3.1012         0.0177\n"
        );
        assert_eq!(
            format_drift_csv(&[("04", &deep)]),
            "sequence,segments,t_drift_pct,r_drift_deg_per_m\n04,0,3.1012,0.0177\n"
        );
    }
}
