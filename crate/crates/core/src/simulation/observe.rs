use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Simulator;
use crate::cameras::{tag_corners, CameraError, Pixel, TagDetection};
use crate::geometry::{Pose, Ray};

/// Tag detections per camera at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub timestamp: f64,
    pub detections: BTreeMap<String, Vec<TagDetection>>,
}

impl ObservationSet {
    pub fn for_camera(&self, name: &str) -> &[TagDetection] {
        self.detections.get(name).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn polygon_area(c: &[Pixel; 4]) -> f64 {
    let mut a = 0.0;
    for i in 0..4 {
        let (p, q) = (c[i], c[(i + 1) % 4]);
        a += p[0] * q[1] - q[0] * p[1];
    }
    a.abs() / 2.0
}

impl Simulator {
    /// Detections for every camera with each camera's configured noise.
    pub fn observe(&mut self) -> ObservationSet {
        self.observe_with_noise(None)
    }

    /// Detections with corner noise `noise_px` (pixels, per coordinate) for
    /// every camera, or each camera's own setting when `None`.
    pub fn observe_with_noise(&mut self, noise_px: Option<f64>) -> ObservationSet {
        let mut rng = self.world.obs_rng.clone();
        let out = self.observe_using(noise_px, &mut rng);
        self.world.obs_rng = rng;
        out
    }

    /// Like [`Simulator::observe_with_noise`] but drawing noise from `rng`,
    /// leaving the world untouched.
    pub fn observe_using(&self, noise_px: Option<f64>, rng: &mut impl Rng) -> ObservationSet {
        let frames = self.frames();
        let tags = self.tag_poses();
        let occluders = self.scene_primitives();
        let mut detections = BTreeMap::new();
        for spec in self.scene.cameras.clone() {
            let cam_world = frames.lookup("world", &spec.name).expect("camera frame");
            let world_cam = cam_world.inverse();
            let sigma = noise_px.unwrap_or(spec.noise_px);
            let mut out = Vec::new();
            for (id, size, tag_world, owner) in &tags {
                let tag_cam = world_cam.compose(tag_world);
                let Some(corners) = visible_corners(&spec.camera, &tag_cam, *size, spec.min_pixels) else {
                    continue;
                };
                let occluded = tag_corners(*size).iter().any(|c| {
                    let target = tag_world.transform_point(c);
                    let d = target - cam_world.translation;
                    let dist = d.norm();
                    let ray = Ray::new(cam_world.translation, d);
                    occluders
                        .iter()
                        .filter(|p| owner.as_deref() != Some(p.name.as_str()))
                        .any(|p| p.ray_cast(&ray).is_some_and(|t| t < dist - 1e-4))
                });
                if occluded {
                    continue;
                }
                let mut noisy = corners;
                if sigma > 0.0 {
                    let n = Normal::new(0.0, sigma).expect("finite std");
                    for c in noisy.iter_mut() {
                        c[0] += n.sample(rng);
                        c[1] += n.sample(rng);
                    }
                }
                if !noisy.iter().all(|c| spec.camera.in_image(c)) {
                    continue;
                }
                out.push(TagDetection {
                    tag_id: *id,
                    corners: noisy,
                    camera: spec.name.clone(),
                    timestamp: self.world.time,
                });
            }
            detections.insert(spec.name.clone(), out);
        }
        ObservationSet { timestamp: self.world.time, detections }
    }
}

/// Noise-free corner projections of a tag, or `None` when the tag faces
/// away, leaves the field of view or image, or is smaller than `min_pixels`.
pub(crate) fn visible_corners(
    camera: &crate::cameras::Camera,
    tag_cam: &Pose,
    size: f64,
    min_pixels: f64,
) -> Option<[Pixel; 4]> {
    let normal = tag_cam.transform_vector(&Vector3::z());
    if normal.dot(&-tag_cam.translation) <= 0.0 {
        return None;
    }
    let model = tag_corners(size);
    let projected: Result<Vec<Pixel>, CameraError> =
        model.iter().map(|c| camera.project(&tag_cam.transform_point(c))).collect();
    let projected = projected.ok()?;
    let corners = [projected[0], projected[1], projected[2], projected[3]];
    if !corners.iter().all(|c| camera.in_image(c)) {
        return None;
    }
    if polygon_area(&corners).sqrt() < min_pixels {
        return None;
    }
    Some(corners)
}
