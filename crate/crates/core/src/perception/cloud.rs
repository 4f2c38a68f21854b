use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cameras::StereoRig;
use crate::geometry::{Pose, Primitive, Ray};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointCloudParams {
    /// Grid step in output pixels.
    pub stride: u32,
    /// Disparity quantum in output pixels.
    pub disparity_step: f64,
    /// Points farther than this from the left camera are dropped (m).
    pub max_range: f64,
}

impl Default for PointCloudParams {
    fn default() -> Self {
        Self { stride: 8, disparity_step: 0.25, max_range: 3.0 }
    }
}

/// Points in the left stereo camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub timestamp: f64,
}

impl PointCloud {
    /// ASCII XYZ, one `x y z` line per point.
    pub fn to_xyz(&self) -> String {
        let mut s = String::with_capacity(self.points.len() * 30);
        for p in &self.points {
            let _ = writeln!(s, "{:.6} {:.6} {:.6}", p.x, p.y, p.z);
        }
        s
    }

    pub fn transformed(&self, pose: &Pose) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| pose.transform_point(p)).collect()
    }
}

/// Ray-cast depth on a pixel grid of the left camera, converted to disparity,
/// quantized and re-triangulated.
pub fn simulate_point_cloud(
    primitives: &[Primitive],
    rig: &StereoRig,
    rig_pose: &Pose,
    params: &PointCloudParams,
    timestamp: f64,
) -> PointCloud {
    let cam = &rig.left;
    let b = cam.binning.max(1);
    let (w, h) = (cam.width / b, cam.height / b);
    let stride = params.stride.max(1) as usize;
    let fb = rig.fb();
    let mut points = Vec::new();
    for v in (0..h).step_by(stride) {
        for u in (0..w).step_by(stride) {
            let px = [u as f64, v as f64];
            let dir_cam = cam.unproject(&px);
            let ray = Ray::new(rig_pose.translation, rig_pose.transform_vector(&dir_cam));
            let hit = primitives
                .iter()
                .filter_map(|p| p.ray_cast(&ray))
                .fold(f64::INFINITY, f64::min);
            if !hit.is_finite() {
                continue;
            }
            let z = hit * dir_cam.z;
            if z <= 0.0 {
                continue;
            }
            let d = fb / z;
            let dq = (d / params.disparity_step).round() * params.disparity_step;
            if dq <= 0.0 {
                continue;
            }
            let p = rig.back_project(&px, fb / dq);
            if p.norm() <= params.max_range && p.iter().all(|c| c.is_finite()) {
                points.push(p);
            }
        }
    }
    PointCloud { points, timestamp }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Shape;

    fn wall(z: f64) -> Primitive {
        // Solid half-space beyond z, facing the camera.
        Primitive::new("wall", Pose::new(Pose::rot_x(std::f64::consts::PI).rotation, Vector3::new(0.0, 0.0, z)), Shape::Plane)
    }

    fn rig() -> StereoRig {
        let mut r = StereoRig::nominal();
        r.left = r.left.with_binning(2);
        r.right = r.right.with_binning(2);
        r
    }

    #[test]
    fn plane_points_within_quantization_bound() {
        let rig = rig();
        for z in [0.5, 1.0, 2.0, 2.9] {
            let cloud = simulate_point_cloud(&[wall(z)], &rig, &Pose::identity(), &PointCloudParams { max_range: 10.0, ..Default::default() }, 0.0);
            assert!(!cloud.points.is_empty());
            let bound = z * z * 0.25 / rig.fb();
            for p in &cloud.points {
                let zt = z;
                assert!((p.z - zt).abs() <= bound + 1e-12, "z={z} got {}", p.z);
            }
        }
    }

    #[test]
    fn empty_scene_gives_empty_cloud() {
        let c = simulate_point_cloud(&[], &rig(), &Pose::identity(), &PointCloudParams::default(), 1.0);
        assert!(c.points.is_empty());
        assert_eq!(c.to_xyz(), "");
    }

    #[test]
    fn range_is_clipped() {
        let c = simulate_point_cloud(&[wall(2.5)], &rig(), &Pose::identity(), &PointCloudParams::default(), 0.0);
        assert!(!c.points.is_empty());
        assert!(c.points.iter().all(|p| p.norm() <= 3.0));
        let far = simulate_point_cloud(&[wall(3.5)], &rig(), &Pose::identity(), &PointCloudParams::default(), 0.0);
        assert!(far.points.is_empty());
    }

    #[test]
    fn xyz_format() {
        let c = PointCloud { points: vec![Vector3::new(1.0, -0.5, 2.25)], timestamp: 0.0 };
        assert_eq!(c.to_xyz(), "1.000000 -0.500000 2.250000\n");
    }

    #[test]
    fn every_point_obeys_the_depth_bound_on_a_tilted_plane() {
        let rig = rig();
        let tilted = Pose::new(
            Pose::rot_x(std::f64::consts::PI).rotation * Pose::rot_y(0.4).rotation,
            Vector3::new(0.0, 0.0, 1.5),
        );
        let prim = Primitive::new("p", tilted, Shape::Plane);
        let cloud = simulate_point_cloud(std::slice::from_ref(&prim), &rig, &Pose::identity(), &PointCloudParams { max_range: 10.0, ..Default::default() }, 0.0);
        assert!(cloud.points.len() > 100);
        for p in &cloud.points {
            // True depth along the same pixel ray.
            let dir = p / p.z;
            let t = prim.ray_cast(&Ray::new(Vector3::zeros(), dir)).unwrap();
            let zt = t / dir.norm();
            assert!((p.z - zt).abs() <= zt * zt * 0.25 / rig.fb() + 1e-9);
        }
    }
}
