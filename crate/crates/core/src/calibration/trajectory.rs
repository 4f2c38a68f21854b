use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPoint {
    pub t: f64,
    pub p: Vector3<f64>,
}

impl TimedPoint {
    pub fn new(t: f64, p: Vector3<f64>) -> Self {
        Self { t, p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub max: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

/// Linear interpolation of a time-sorted trajectory. `None` outside its span.
fn sample_at(traj: &[TimedPoint], t: f64) -> Option<Vector3<f64>> {
    let first = traj.first()?;
    let last = traj.last()?;
    if t < first.t || t > last.t {
        return None;
    }
    let k = traj.partition_point(|s| s.t < t);
    let hi = traj[k];
    if hi.t == t {
        return Some(hi.p);
    }
    let lo = traj[k - 1];
    let u = (t - lo.t) / (hi.t - lo.t);
    Some(lo.p + (hi.p - lo.p) * u)
}

/// Euclidean error between `kin` and `vis` at every `kin` timestamp inside
/// the time span of `vis`, with `vis` linearly interpolated. No frame
/// alignment is applied; see [`align_rigid`].
pub fn evaluate_trajectories(kin: &[TimedPoint], vis: &[TimedPoint]) -> Result<ErrorStats, CalibrationError> {
    if kin.is_empty() || vis.is_empty() {
        return Err(CalibrationError::EmptyTrajectory);
    }
    let mut vis = vis.to_vec();
    vis.sort_by(|a, b| a.t.total_cmp(&b.t));
    let (mut n, mut mean, mut m2, mut max) = (0usize, 0.0f64, 0.0f64, 0.0f64);
    for k in kin {
        let Some(v) = sample_at(&vis, k.t) else { continue };
        let e = (k.p - v).norm();
        n += 1;
        let d = e - mean;
        mean += d / n as f64;
        m2 += d * (e - mean);
        max = max.max(e);
    }
    if n == 0 {
        return Err(CalibrationError::NoTemporalOverlap);
    }
    Ok(ErrorStats { mean, max, std: (m2 / n as f64).sqrt(), n })
}

/// Rigid transform `T` (no scale) minimising `Σ |T·src_i − dst_i|²`
/// (Umeyama). Requires at least three non-collinear pairs for a unique
/// rotation.
pub fn align_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Pose {
    let n = src.len().min(dst.len());
    if n == 0 {
        return Pose::identity();
    }
    let cs: Vector3<f64> = src[..n].iter().sum::<Vector3<f64>>() / n as f64;
    let cd: Vector3<f64> = dst[..n].iter().sum::<Vector3<f64>>() / n as f64;
    let mut h = Matrix3::zeros();
    for (s, d) in src[..n].iter().zip(&dst[..n]) {
        h += (d - cd) * (s - cs).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut s = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * vt;
    Pose::from_rotation_matrix(&r, cd - r * cs)
}

/// Parses `t,source,x,y,z` lines into `(kinematic, visual)` trajectories.
/// Sources other than `kin`/`kinematic` and `vis`/`visual` are rejected.
pub fn parse_trajectory_log(text: &str) -> Result<(Vec<TimedPoint>, Vec<TimedPoint>), CalibrationError> {
    let (mut kin, mut vis) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("t,") {
            continue;
        }
        let bad = |message: String| CalibrationError::BadLog { line: i + 1, message };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        let pt = TimedPoint::new(num(f[0])?, Vector3::new(num(f[2])?, num(f[3])?, num(f[4])?));
        match f[1] {
            "kin" | "kinematic" => kin.push(pt),
            "vis" | "visual" => vis.push(pt),
            other => return Err(bad(format!("unknown source `{other}`"))),
        }
    }
    Ok((kin, vis))
}
