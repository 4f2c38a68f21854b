use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::geometry::{skew, Pose};

/// Wrist and tag timestamps closer than this pair into one sample (s).
pub const SYNC_TOLERANCE: f64 = 0.05;
/// Two relative-rotation axes must be at least this far apart (rad).
pub const MIN_AXIS_ANGLE: f64 = 5.0 * std::f64::consts::PI / 180.0;
/// Relative motions with smaller rotation have no usable axis.
const MIN_MOTION_ANGLE: f64 = 1e-3;
/// Near a half turn the sign of the Rodrigues vector is ambiguous, so such
/// motions are left out of the rotation stage.
const MAX_MOTION_ANGLE: f64 = 160.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandEyeSample {
    /// Wrist in the arm base frame, from forward kinematics.
    pub wrist_pose: Pose,
    /// Calibration tag in the camera frame, from PnP.
    pub tag_pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandEyeResult {
    /// Camera in the wrist frame.
    pub hand_eye: Pose,
    /// RMS rotation mismatch of `AX` against `XB` over all motion pairs (rad).
    pub rotation_residual: f64,
    /// RMS translation mismatch (m).
    pub translation_residual: f64,
    pub motions: usize,
}

/// Pairs each tag observation with the nearest wrist pose within `tolerance`
/// seconds. Both inputs are `(time, pose)` sorted by time.
pub fn pair_samples(wrist: &[(f64, Pose)], tags: &[(f64, Pose)], tolerance: f64) -> Vec<HandEyeSample> {
    let mut out = Vec::new();
    for (t, tag) in tags {
        let nearest = wrist
            .iter()
            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()));
        if let Some((tw, w)) = nearest {
            if (tw - t).abs() <= tolerance {
                out.push(HandEyeSample { wrist_pose: *w, tag_pose: *tag });
            }
        }
    }
    out
}

/// Relative wrist motions `A` and camera motions `B` with `A X = X B` for
/// every sample pair.
fn motions(samples: &[HandEyeSample]) -> Vec<(Pose, Pose)> {
    let mut out = Vec::new();
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let a = samples[j].wrist_pose.inverse().compose(&samples[i].wrist_pose);
            let b = samples[j].tag_pose.compose(&samples[i].tag_pose.inverse());
            out.push((a, b));
        }
    }
    out
}

/// Modified Rodrigues vector `2 sin(θ/2) n`.
fn rodrigues(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    // q = (cos θ/2, sin θ/2 n), sign fixed so θ ∈ [0, π].
    let v = q.imag() * 2.0;
    if q.w < 0.0 {
        -v
    } else {
        v
    }
}

fn check_axes(motions: &[(Pose, Pose)]) -> Result<(), CalibrationError> {
    let axes: Vec<Vector3<f64>> = motions
        .iter()
        .filter_map(|(a, _)| a.rotation.axis_angle())
        .filter(|(_, angle)| *angle > MIN_MOTION_ANGLE)
        .map(|(axis, _)| axis.into_inner())
        .collect();
    let cos_min = MIN_AXIS_ANGLE.cos();
    for i in 0..axes.len() {
        for j in i + 1..axes.len() {
            if axes[i].dot(&axes[j]).abs() <= cos_min {
                return Ok(());
            }
        }
    }
    Err(CalibrationError::DegenerateRotations { min_deg: MIN_AXIS_ANGLE.to_degrees() })
}

/// Normal-equation solve of an overdetermined 3-unknown system.
fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Vector3<f64>, CalibrationError> {
    let at = a.transpose();
    let x = (&at * a)
        .cholesky()
        .map(|c| c.solve(&(&at * b)))
        .ok_or(CalibrationError::DegenerateRotations { min_deg: MIN_AXIS_ANGLE.to_degrees() })?;
    Ok(Vector3::new(x[0], x[1], x[2]))
}

/// Two-stage Tsai–Lenz solution of `A_i X = X B_i` over all sample pairs:
/// rotation from the linear system on modified Rodrigues vectors, then
/// translation by linear least squares.
pub fn calibrate_hand_eye(samples: &[HandEyeSample]) -> Result<HandEyeResult, CalibrationError> {
    if samples.len() < 3 {
        return Err(CalibrationError::InsufficientMotion { needed: 3, got: samples.len() });
    }
    let motions = motions(samples);
    check_axes(&motions)?;

    let usable: Vec<&(Pose, Pose)> = motions
        .iter()
        .filter(|(a, b)| {
            let (ta, tb) = (a.rotation.angle(), b.rotation.angle());
            ta > MIN_MOTION_ANGLE && ta < MAX_MOTION_ANGLE && tb < MAX_MOTION_ANGLE
        })
        .collect();
    if usable.len() < 2 {
        return Err(CalibrationError::DegenerateRotations { min_deg: MIN_AXIS_ANGLE.to_degrees() });
    }
    let mut lhs = DMatrix::zeros(3 * usable.len(), 3);
    let mut rhs = DVector::zeros(3 * usable.len());
    for (k, (a, b)) in usable.iter().enumerate() {
        let pa = rodrigues(&a.rotation);
        let pb = rodrigues(&b.rotation);
        lhs.fixed_view_mut::<3, 3>(3 * k, 0).copy_from(&skew(&(pa + pb)));
        rhs.fixed_rows_mut::<3>(3 * k).copy_from(&(pb - pa));
    }
    let p_prime = least_squares(&lhs, &rhs)?;
    // P' = tan(θ/2) n.
    let rotation = match nalgebra::Unit::try_new(p_prime, 1e-300) {
        Some(axis) => UnitQuaternion::from_axis_angle(&axis, 2.0 * p_prime.norm().atan()),
        None => UnitQuaternion::identity(),
    };
    let rx: Matrix3<f64> = rotation.to_rotation_matrix().into_inner();

    let m = motions.len();
    let mut lhs = DMatrix::zeros(3 * m, 3);
    let mut rhs = DVector::zeros(3 * m);
    for (k, (a, b)) in motions.iter().enumerate() {
        lhs.fixed_view_mut::<3, 3>(3 * k, 0)
            .copy_from(&(a.rotation_matrix() - Matrix3::identity()));
        rhs.fixed_rows_mut::<3>(3 * k).copy_from(&(rx * b.translation - a.translation));
    }
    let t = least_squares(&lhs, &rhs)?;
    let hand_eye = Pose::new(rotation, t);

    let (mut sr, mut st) = (0.0, 0.0);
    for (a, b) in &motions {
        let l = a.compose(&hand_eye);
        let r = hand_eye.compose(b);
        sr += l.angle_to(&r).powi(2);
        st += l.distance_to(&r).powi(2);
    }
    Ok(HandEyeResult {
        hand_eye,
        rotation_residual: (sr / m as f64).sqrt(),
        translation_residual: (st / m as f64).sqrt(),
        motions: m,
    })
}

/// Stereo camera pose in the arm base frame from one tag seen by both the
/// stereo and the wrist camera at the same instant.
pub fn calibrate_stereo_to_base(tag_in_stereo: &Pose, tag_in_fisheye: &Pose, fk_chain: &Pose, hand_eye: &Pose) -> Pose {
    let tag_in_base = fk_chain.compose(hand_eye).compose(tag_in_fisheye);
    tag_in_base.compose(&tag_in_stereo.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cameras::{estimate_tag_pose, tag_corners, Camera, FisheyeModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_pose(rng: &mut impl Rng, t: f64) -> Pose {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Pose::new(
            UnitQuaternion::from_scaled_axis(axis.normalize() * rng.random_range(0.1..2.5)),
            Vector3::new(rng.random_range(-t..t), rng.random_range(-t..t), rng.random_range(-t..t)),
        )
    }

    /// Camera looking at a tag at the base origin from 0.3-0.5 m, up to 35°
    /// off the tag normal, with random roll.
    fn viewing_camera(rng: &mut impl Rng) -> Pose {
        let tilt = rng.random_range(0.0..35f64.to_radians());
        let az = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let dist = rng.random_range(0.3..0.5);
        let dir = Vector3::new(tilt.sin() * az.cos(), tilt.sin() * az.sin(), tilt.cos());
        let z = -dir;
        let helper = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let x0 = z.cross(&helper).normalize();
        let roll = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let x = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(z), roll) * x0;
        let y = z.cross(&x);
        Pose::from_rotation_matrix(&Matrix3::from_columns(&[x, y, z]), dir * dist)
    }

    fn synthetic(rng: &mut impl Rng, x: &Pose, n: usize) -> (Vec<HandEyeSample>, Vec<Pose>) {
        let tag = Pose::identity();
        let mut samples = Vec::new();
        let mut cams = Vec::new();
        for _ in 0..n {
            let cam = viewing_camera(rng);
            samples.push(HandEyeSample { wrist_pose: cam.compose(&x.inverse()), tag_pose: cam.inverse().compose(&tag) });
            cams.push(cam);
        }
        (samples, cams)
    }

    #[test]
    fn zero_noise_recovers_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = random_pose(&mut rng, 0.2);
            let (samples, _) = synthetic(&mut rng, &x, 10);
            let r = calibrate_hand_eye(&samples).unwrap();
            assert!(r.hand_eye.distance_to(&x) <= 1e-9, "{}", r.hand_eye.distance_to(&x));
            assert!(r.hand_eye.angle_to(&x) <= 1e-9);
            assert!(r.translation_residual < 1e-9);
        }
    }

    #[test]
    fn single_axis_motion_is_degenerate() {
        let x = Pose::from_translation(0.0, 0.05, 0.08).compose(&Pose::rot_y(0.4));
        let samples: Vec<_> = (0..6)
            .map(|k| {
                let w = Pose::from_translation(0.1 * k as f64, 0.0, 0.2).compose(&Pose::rot_z(0.3 * k as f64));
                HandEyeSample { wrist_pose: w, tag_pose: w.compose(&x).inverse() }
            })
            .collect();
        assert!(matches!(calibrate_hand_eye(&samples), Err(CalibrationError::DegenerateRotations { .. })));
    }

    #[test]
    fn too_few_samples() {
        let s = HandEyeSample { wrist_pose: Pose::identity(), tag_pose: Pose::identity() };
        assert_eq!(
            calibrate_hand_eye(&[s, s]),
            Err(CalibrationError::InsufficientMotion { needed: 3, got: 2 })
        );
    }

    #[test]
    fn residual_invariant_under_global_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_pose(&mut rng, 0.1);
        let (mut samples, _) = synthetic(&mut rng, &x, 8);
        for s in &mut samples {
            s.tag_pose = random_pose(&mut rng, 0.002).compose(&s.tag_pose);
        }
        let r0 = calibrate_hand_eye(&samples).unwrap();
        let g = random_pose(&mut rng, 1.0);
        let moved: Vec<_> = samples
            .iter()
            .map(|s| HandEyeSample { wrist_pose: g.compose(&s.wrist_pose), tag_pose: s.tag_pose })
            .collect();
        let r1 = calibrate_hand_eye(&moved).unwrap();
        assert!((r0.rotation_residual - r1.rotation_residual).abs() < 1e-9);
        assert!((r0.translation_residual - r1.translation_residual).abs() < 1e-9);
        assert!(r0.hand_eye.approx_eq(&r1.hand_eye, 1e-9));
    }

    /// Full-resolution fisheye and a 15 cm calibration tag.
    #[test]
    fn noisy_corners_give_millimetre_translation() {
        let cam = Camera::Fisheye(FisheyeModel::nominal());
        let size = 0.15;
        let model = tag_corners(size);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut good = 0;
        for _ in 0..200 {
            let x = random_pose(&mut rng, 0.1);
            let (mut samples, _) = synthetic(&mut rng, &x, 20);
            for s in &mut samples {
                let corners = [0, 1, 2, 3].map(|k| {
                    let p = cam.project(&s.tag_pose.transform_point(&model[k])).unwrap();
                    [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)]
                });
                s.tag_pose = estimate_tag_pose(&cam, &corners, size).unwrap().pose;
            }
            let r = calibrate_hand_eye(&samples).unwrap();
            if r.hand_eye.distance_to(&x) <= 0.005 {
                good += 1;
            }
        }
        assert!(good >= 190, "{good}/200");
    }

    #[test]
    fn pairs_within_sync_tolerance() {
        let w = [(0.0, Pose::identity()), (1.0, Pose::from_translation(1.0, 0.0, 0.0))];
        let t = [(0.04, Pose::identity()), (0.5, Pose::identity()), (1.01, Pose::identity())];
        let s = pair_samples(&w, &t, SYNC_TOLERANCE);
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].wrist_pose.translation.x, 1.0);
    }

    #[test]
    fn stereo_to_base_identity() {
        let i = Pose::identity();
        assert_eq!(calibrate_stereo_to_base(&i, &i, &i, &i), i);
    }

    #[test]
    fn stereo_to_base_from_simulator() {
        let mut sim = crate::simulation::tests::testbed_at("ready");
        let obs = sim.observe_with_noise(Some(0.0));
        let stereo = sim.scene.camera("stereo").unwrap().clone();
        let fish = sim.scene.camera("fisheye").unwrap().clone();
        let find = |name: &str| obs.for_camera(name).iter().find(|d| d.tag_id == 1).unwrap().corners;
        let size = sim.tag_size(1).unwrap();
        let in_stereo = estimate_tag_pose(&stereo.camera, &find("stereo"), size).unwrap().pose;
        let in_fish = estimate_tag_pose(&fish.camera, &find("fisheye"), size).unwrap().pose;
        let fk = sim.arm().forward_kinematics(&sim.true_joints()).unwrap();
        let got = calibrate_stereo_to_base(&in_stereo, &in_fish, &fk[6], &fish.mount);
        let truth = sim.frames().lookup("arm_base", "stereo").unwrap();
        assert!(got.distance_to(&truth) <= 1e-9, "{}", got.distance_to(&truth));
        assert!(got.angle_to(&truth) <= 1e-9);

        // The estimate predicts where the tag appears in the left image.
        let tag_in_base = sim.frames().lookup("arm_base", "tag_1").unwrap();
        let predicted = got.inverse().compose(&tag_in_base);
        for (c, seen) in tag_corners(size).iter().zip(find("stereo")) {
            let p = stereo.camera.project(&predicted.transform_point(c)).unwrap();
            assert!((p[0] - seen[0]).abs() < 1e-6 && (p[1] - seen[1]).abs() < 1e-6);
        }
    }
}
