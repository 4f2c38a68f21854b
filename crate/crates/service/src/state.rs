//! Scene-state snapshots and the change detector that decides when one is
//! worth sending.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use base64::Engine as _;
use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use nalgebra::Vector3;
use uvms_core::planning::{Executive, TaskState};
use uvms_core::simulation::Simulator;

use crate::protocol::{CloudSummary, StatePayload, ToolView, WirePose};

/// Waypoints kept from a staged plan for display.
pub const PREVIEW_POINTS: usize = 12;
/// Grid of the stereo cloud summary (m).
pub const CLOUD_VOXEL: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Joint and door angle change (rad).
    pub angle: f64,
    /// Tool or marker position change (m).
    pub position: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { angle: 0.5f64.to_radians(), position: 0.005 }
    }
}

/// Compares each snapshot with the last one published.
#[derive(Debug, Clone, Default)]
pub struct ChangeDetector {
    pub thresholds: Thresholds,
    last: Option<StatePayload>,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn moved(a: &WirePose, b: &WirePose, th: &Thresholds) -> bool {
    let dp = max_abs_diff(&a.translation, &b.translation);
    let dot: f64 = a.rotation.iter().zip(&b.rotation).map(|(x, y)| x * y).sum();
    let angle = 2.0 * dot.abs().min(1.0).acos();
    dp > th.position || angle > th.angle
}

impl ChangeDetector {
    pub fn new(thresholds: Thresholds) -> Self {
        Self { thresholds, last: None }
    }

    pub fn changed(&self, s: &StatePayload) -> bool {
        let Some(p) = &self.last else { return true };
        let th = &self.thresholds;
        if p.phase != s.phase
            || p.selected_tool != s.selected_tool
            || p.held_tool != s.held_tool
            || p.last_error != s.last_error
            || p.plan_preview.len() != s.plan_preview.len()
            || max_abs_diff(&p.joints, &s.joints) > th.angle
            || max_abs_diff(&p.doors, &s.doors) > th.angle
        {
            return true;
        }
        match (&p.marker, &s.marker) {
            (None, None) => {}
            (Some(a), Some(b)) if !moved(a, b, th) => {}
            _ => return true,
        }
        let before: BTreeMap<&str, &ToolView> = p.tools.iter().map(|t| (t.id.as_str(), t)).collect();
        s.tools.len() != p.tools.len()
            || s.tools.iter().any(|t| {
                before.get(t.id.as_str()).is_none_or(|o| o.tracked != t.tracked || moved(&o.pose, &t.pose, th))
            })
            || max_abs_diff(&flat(&p.plan_preview), &flat(&s.plan_preview)) > th.angle
    }
}

fn flat(v: &[Vec<f64>]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

/// The snapshot to send, if any: always on request, otherwise only when it
/// differs from the last published one by more than the thresholds.
pub fn publish_state(snapshot: &StatePayload, detector: &mut ChangeDetector, requested: bool) -> Option<StatePayload> {
    if !requested && !detector.changed(snapshot) {
        return None;
    }
    let mut sent = snapshot.clone();
    if !requested {
        sent.cloud = None;
    }
    detector.last = Some(sent.clone());
    Some(sent)
}

/// Refreshes the parts of a snapshot that change while the arm moves.
pub fn refresh(s: &mut StatePayload, sim: &Simulator, task: &TaskState) {
    let w = sim.world();
    s.time = w.time;
    s.phase = task.phase;
    s.selected_tool = task.selected_tool.clone();
    s.held_tool = sim.held_tool().map(str::to_string);
    s.joints = sim.feedback().0.clone();
    s.doors = [w.door_angles.0, w.door_angles.1];
    s.marker = task.marker.as_ref().map(WirePose::from);
    s.last_error = task.last_error.clone();
}

/// Full snapshot of an executive, without the cloud.
pub fn snapshot(ex: &Executive) -> StatePayload {
    let mut s = StatePayload {
        time: 0.0,
        phase: ex.phase(),
        selected_tool: None,
        held_tool: None,
        joints: vec![],
        doors: [0.0; 2],
        tools: ex
            .localizer
            .estimates()
            .map(|e| ToolView { id: e.tool_id.clone(), pose: WirePose::from(&e.handle_pose), tracked: e.tracked })
            .collect(),
        marker: None,
        plan_preview: ex.staged_plan().map(|p| preview(&p.display.waypoints.iter().map(|w| w.q.0.clone()).collect::<Vec<_>>())).unwrap_or_default(),
        last_error: None,
        cloud: None,
    };
    refresh(&mut s, &ex.sim, &ex.task);
    s
}

/// `n` evenly spaced configurations including both ends.
pub fn preview(path: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if path.len() <= PREVIEW_POINTS {
        return path.to_vec();
    }
    (0..PREVIEW_POINTS).map(|i| path[i * (path.len() - 1) / (PREVIEW_POINTS - 1)].clone()).collect()
}

/// Voxel-downsamples `points` and packs the occupied cells.
pub fn cloud_summary(points: &[Vector3<f64>], voxel: f64) -> CloudSummary {
    let mut cells: Vec<[i64; 3]> = points.iter().map(|p| [0, 1, 2].map(|k| (p[k] / voxel).floor() as i64)).collect();
    cells.sort_unstable();
    cells.dedup();
    let origin = cells.iter().fold([i64::MAX; 3], |m, c| [m[0].min(c[0]), m[1].min(c[1]), m[2].min(c[2])]);
    let mut raw = Vec::with_capacity(cells.len() * 6);
    let mut kept = 0u32;
    for c in &cells {
        let off = [c[0] - origin[0], c[1] - origin[1], c[2] - origin[2]];
        if off.iter().all(|&o| o <= i16::MAX as i64) {
            for o in off {
                raw.extend_from_slice(&(o as i16).to_le_bytes());
            }
            kept += 1;
        }
    }
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::best());
    enc.write_all(&raw).expect("in-memory write");
    let packed = enc.finish().expect("in-memory write");
    let origin = if cells.is_empty() { [0.0; 3] } else { origin.map(|o| o as f64 * voxel) };
    CloudSummary { points: kept, voxel, origin, data: base64::engine::general_purpose::STANDARD.encode(packed) }
}

/// Cell centres of a summary.
pub fn decode_cloud(c: &CloudSummary) -> Result<Vec<[f64; 3]>, String> {
    let packed = base64::engine::general_purpose::STANDARD.decode(&c.data).map_err(|e| e.to_string())?;
    let mut raw = Vec::new();
    ZlibDecoder::new(packed.as_slice()).read_to_end(&mut raw).map_err(|e| e.to_string())?;
    if raw.len() != c.points as usize * 6 {
        return Err(format!("expected {} cells, got {} bytes", c.points, raw.len()));
    }
    Ok(raw
        .chunks_exact(6)
        .map(|b| {
            let v = |k: usize| i16::from_le_bytes([b[2 * k], b[2 * k + 1]]) as f64;
            [0, 1, 2].map(|k| c.origin[k] + (v(k) + 0.5) * c.voxel)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::tests::sample_messages;
    use crate::protocol::Payload;

    fn base() -> StatePayload {
        match sample_messages().remove(0).payload {
            Payload::State(s) => StatePayload { cloud: None, ..s },
            _ => unreachable!(),
        }
    }

    #[test]
    fn unchanged_world_sends_nothing() {
        let mut d = ChangeDetector::default();
        let s = base();
        assert!(publish_state(&s, &mut d, false).is_some());
        assert!(publish_state(&s, &mut d, false).is_none());
        assert!(publish_state(&s, &mut d, true).is_some());
    }

    #[test]
    fn thresholds() {
        let mut d = ChangeDetector::default();
        let s = base();
        publish_state(&s, &mut d, false);
        let mut small = s.clone();
        small.joints[1] += 0.4f64.to_radians();
        small.tools[0].pose.translation[0] += 0.004;
        small.time += 5.0;
        assert!(publish_state(&small, &mut d, false).is_none());
        let mut big = s.clone();
        big.joints[1] += 1f64.to_radians();
        assert!(publish_state(&big, &mut d, false).is_some());
        let mut tool = big.clone();
        tool.tools[0].pose.translation[2] += 0.006;
        assert!(publish_state(&tool, &mut d, false).is_some());
        let mut phase = tool.clone();
        phase.phase = uvms_core::planning::Phase::ExecGrasp;
        assert!(publish_state(&phase, &mut d, false).is_some());
        let mut lost = phase.clone();
        lost.tools[0].tracked = false;
        assert!(publish_state(&lost, &mut d, false).is_some());
    }

    #[test]
    fn slow_drift_accumulates() {
        let mut d = ChangeDetector::default();
        let mut s = base();
        publish_state(&s, &mut d, false);
        let mut sent = 0;
        for _ in 0..10 {
            s.joints[0] += 0.2f64.to_radians();
            sent += publish_state(&s, &mut d, false).is_some() as usize;
        }
        assert_eq!(sent, 3);
    }

    #[test]
    fn cloud_summary_round_trips_to_voxel_centres() {
        let pts: Vec<Vector3<f64>> =
            (0..500).map(|i| Vector3::new((i % 10) as f64 * 0.05 - 0.2, (i / 10 % 10) as f64 * 0.05, 1.0 + (i / 100) as f64 * 0.05)).collect();
        let c = cloud_summary(&pts, 0.02);
        assert_eq!(c.points, 500);
        let back = decode_cloud(&c).unwrap();
        for p in &pts {
            assert!(back.iter().any(|q| (0..3).all(|k| (q[k] - p[k]).abs() <= 0.01 + 1e-12)));
        }
        let dup = cloud_summary(&[pts[0], pts[0]], 0.02);
        assert_eq!(dup.points, 1);
        assert_eq!(decode_cloud(&cloud_summary(&[], 0.02)).unwrap().len(), 0);
    }

    #[test]
    fn preview_keeps_the_ends() {
        let path: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let p = preview(&path);
        assert_eq!(p.len(), PREVIEW_POINTS);
        assert_eq!(p[0], vec![0.0]);
        assert_eq!(p.last().unwrap(), &vec![99.0]);
        assert_eq!(preview(&path[..3]).len(), 3);
    }
}
