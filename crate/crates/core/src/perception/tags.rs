use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::PerceptionError;
use crate::cameras::{estimate_tag_pose, refine_tag_pose, tag_corners, Camera, Pixel, TagDetection};
use crate::geometry::Pose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedTag {
    /// Tag pose in the origin camera frame.
    pub pose: Pose,
    /// `1 / (1 + mean reprojection residual in px)`, in (0, 1].
    pub confidence: f64,
    pub last_seen: f64,
    pub size: f64,
    window: VecDeque<[Pixel; 4]>,
}

impl TrackedTag {
    pub fn window_len(&self) -> usize {
        self.window.len()
    }
}

/// Per-tag sliding-window pose tracker with the origin camera as the
/// reference frame.
///
/// Each tag keeps its last `window` detections; the pose is the joint
/// reprojection least-squares fit over them. When a new detection is
/// inconsistent with the current estimate by more than `reset_gate_px` RMS
/// (the camera or tag moved) the window restarts from that detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagGraph {
    pub origin_camera: String,
    pub window: usize,
    pub reset_gate_px: f64,
    tracked: BTreeMap<u32, TrackedTag>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TagUpdateReport {
    pub updated: Vec<u32>,
    pub errors: Vec<(u32, PerceptionError)>,
}

fn rms_reprojection(camera: &Camera, pose: &Pose, size: f64, corners: &[Pixel; 4]) -> f64 {
    let model = tag_corners(size);
    let mut sum = 0.0;
    for (m, c) in model.iter().zip(corners) {
        match camera.project(&pose.transform_point(m)) {
            Ok(p) => sum += (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2),
            Err(_) => return f64::INFINITY,
        }
    }
    (sum / 4.0).sqrt()
}

impl TagGraph {
    pub fn new(origin_camera: impl Into<String>) -> Self {
        Self {
            origin_camera: origin_camera.into(),
            window: 10,
            reset_gate_px: 3.0,
            tracked: BTreeMap::new(),
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window.max(1);
        self
    }

    pub fn get(&self, tag_id: u32) -> Option<&TrackedTag> {
        self.tracked.get(&tag_id)
    }

    pub fn tags(&self) -> impl Iterator<Item = (u32, &TrackedTag)> {
        self.tracked.iter().map(|(k, v)| (*k, v))
    }

    /// Folds a batch of detections into the graph. Failures are reported per
    /// tag; the rest of the batch is still applied.
    pub fn update(
        &mut self,
        detections: &[TagDetection],
        camera: &Camera,
        tag_size: impl Fn(u32) -> Option<f64>,
    ) -> TagUpdateReport {
        let mut report = TagUpdateReport::default();
        for det in detections {
            match self.update_one(det, camera, &tag_size) {
                Ok(()) => report.updated.push(det.tag_id),
                Err(e) => report.errors.push((det.tag_id, e)),
            }
        }
        report
    }

    fn update_one(
        &mut self,
        det: &TagDetection,
        camera: &Camera,
        tag_size: &impl Fn(u32) -> Option<f64>,
    ) -> Result<(), PerceptionError> {
        if det.camera != self.origin_camera {
            return Err(PerceptionError::WrongCamera {
                expected: self.origin_camera.clone(),
                got: det.camera.clone(),
            });
        }
        let size = tag_size(det.tag_id).ok_or(PerceptionError::UnknownTag(det.tag_id))?;
        let single = estimate_tag_pose(camera, &det.corners, size)?;
        let (mut window, init) = match self.tracked.get(&det.tag_id) {
            Some(t) if rms_reprojection(camera, &t.pose, size, &det.corners) <= self.reset_gate_px => {
                (t.window.clone(), t.pose)
            }
            _ => (VecDeque::new(), single.pose),
        };
        window.push_back(det.corners);
        while window.len() > self.window {
            window.pop_front();
        }
        let est = if window.len() == 1 {
            single
        } else {
            let obs: Vec<[Pixel; 4]> = window.iter().copied().collect();
            refine_tag_pose(camera, &obs, size, &init)?
        };
        self.tracked.insert(
            det.tag_id,
            TrackedTag {
                pose: est.pose,
                confidence: 1.0 / (1.0 + est.residual),
                last_seen: det.timestamp,
                size,
                window,
            },
        );
        Ok(())
    }
}
