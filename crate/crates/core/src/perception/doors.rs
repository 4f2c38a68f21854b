use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{PerceptionError, TagGraph};
use crate::geometry::{wrap_angle, Pose};

/// Door hinge geometry in the vehicle-tag frame. Both hinges rotate about
/// the vehicle-tag z axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoorKinematics {
    /// Vehicle tag to starboard hinge.
    pub t_os: Vector3<f64>,
    /// Vehicle tag to port hinge.
    pub t_op: Vector3<f64>,
    pub theta_s0: f64,
    pub theta_p0: f64,
}

/// `(θ_s, θ_p)` from the vehicle-tag→starboard-tag translation `t_vs` and
/// the vehicle-tag→stereo-camera translation `t_vp`, both in the vehicle-tag
/// frame.
pub fn estimate_door_angles(
    t_vs: &Vector3<f64>,
    t_vp: &Vector3<f64>,
    dk: &DoorKinematics,
) -> Result<(f64, f64), PerceptionError> {
    let ts = t_vs - dk.t_os;
    let tp = t_vp - dk.t_op;
    if ts.xy().norm() < 1e-6 || tp.xy().norm() < 1e-6 {
        return Err(PerceptionError::DegenerateGeometry);
    }
    Ok((
        wrap_angle(ts.y.atan2(ts.x) - dk.theta_s0),
        wrap_angle(tp.y.atan2(tp.x) - dk.theta_p0),
    ))
}

/// `(t_vs, t_vp)` from the vehicle and starboard tag poses as seen by the
/// stereo camera.
pub fn door_translations(vehicle_tag_in_cam: &Pose, starboard_tag_in_cam: &Pose) -> (Vector3<f64>, Vector3<f64>) {
    let cam_in_vehicle_tag = vehicle_tag_in_cam.inverse();
    let t_vs = cam_in_vehicle_tag.compose(starboard_tag_in_cam).translation;
    (t_vs, cam_in_vehicle_tag.translation)
}

/// Door angles from a stereo-origin tag graph holding the vehicle tag and
/// the starboard door tag.
pub fn door_angles_from_graph(
    graph: &TagGraph,
    vehicle_tag: u32,
    starboard_tag: u32,
    dk: &DoorKinematics,
) -> Result<(f64, f64), PerceptionError> {
    let v = graph.get(vehicle_tag).ok_or(PerceptionError::UnknownTag(vehicle_tag))?;
    let s = graph.get(starboard_tag).ok_or(PerceptionError::UnknownTag(starboard_tag))?;
    let (t_vs, t_vp) = door_translations(&v.pose, &s.pose);
    estimate_door_angles(&t_vs, &t_vp, dk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn dk(t_os: Vector3<f64>, theta_s0: f64) -> DoorKinematics {
        DoorKinematics {
            t_os,
            t_op: Vector3::new(0.0, 1.0, 0.0),
            theta_s0,
            theta_p0: 0.0,
        }
    }

    #[test]
    fn aligned_case_is_zero() {
        let (s, _) =
            estimate_door_angles(&Vector3::new(1.0, 0.0, 0.0), &Vector3::new(1.0, 1.0, 0.0), &dk(Vector3::zeros(), 0.0))
                .unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn offset_cancels() {
        let k = dk(Vector3::new(1.0, 0.0, 0.0), FRAC_PI_2);
        let (s, _) = estimate_door_angles(&Vector3::new(1.0, 1.0, 0.0), &Vector3::new(1.0, 1.0, 0.0), &k).unwrap();
        assert_relative_eq!(s, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_geometry() {
        let k = dk(Vector3::new(1.0, 0.0, 0.0), 0.0);
        assert_eq!(
            estimate_door_angles(&Vector3::new(1.0, 0.0, 0.4), &Vector3::new(1.0, 1.0, 0.0), &k),
            Err(PerceptionError::DegenerateGeometry)
        );
    }

    #[test]
    fn quadrant_correct_behind_hinge() {
        let k = dk(Vector3::zeros(), 0.0);
        let (s, _) = estimate_door_angles(&Vector3::new(-1.0, -1.0, 0.0), &Vector3::new(1.0, 1.0, 0.0), &k).unwrap();
        assert_relative_eq!(s, -3.0 * std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn invariant_to_z(x in -2.0..2.0f64, y in 0.2..2.0f64, z1 in -1.0..1.0f64, z2 in -1.0..1.0f64, oz in -1.0..1.0f64) {
            let k = dk(Vector3::new(0.1, -0.3, oz), 0.3);
            let a = estimate_door_angles(&Vector3::new(x, y, z1), &Vector3::new(0.5, 2.0, 0.0), &k).unwrap();
            let b = estimate_door_angles(&Vector3::new(x, y, z2), &Vector3::new(0.5, 2.0, 7.0), &k).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        }
    }

    fn observed_angles(starboard: f64, port: f64, noise: f64, frames: usize, seed: u64) -> (f64, f64) {
        let mut scene = crate::simulation::tests::nui_scene();
        scene.doors.starboard.angle = starboard;
        scene.doors.port.angle = port;
        let mut sim = crate::simulation::Simulator::with_seed(scene, seed);
        let cam = sim.scene.camera("stereo").unwrap().camera;
        let mut g = TagGraph::new("stereo");
        for _ in 0..frames {
            let obs = sim.observe_with_noise(Some(noise));
            let sizes = |id| sim.tag_size(id);
            g.update(obs.for_camera("stereo"), &cam, sizes);
        }
        door_angles_from_graph(&g, 1, 2, &sim.door_kinematics()).unwrap()
    }

    #[test]
    fn simulated_door_at_37_5_degrees() {
        let (s, p) = observed_angles(-0.3, 37.5f64.to_radians(), 0.0, 1, 1);
        assert!((p - 37.5f64.to_radians()).abs() <= 1e-6, "{}", p.to_degrees());
        assert!((s + 0.3).abs() <= 1e-6);
        let (s, _) = observed_angles(-37.5f64.to_radians(), 0.1, 0.0, 1, 1);
        assert!((s + 37.5f64.to_radians()).abs() <= 1e-6);
    }
}
