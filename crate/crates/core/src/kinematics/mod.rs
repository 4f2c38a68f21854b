//! Serial revolute-arm kinematics.
//!
//! A chain is an ordered list of links; link `i` is reached from link `i-1`
//! by a fixed offset followed by a rotation of `q[i]` about the link's
//! joint axis. Forward kinematics returns one pose per link plus the
//! end-effector (tool) pose.

mod encoder;
mod ik;

pub use encoder::{arc_resolution, encoder_resolution, JointCalibration, JointReading};
pub use ik::{solve_ik, solve_ik_with_restarts, IkParams, IkSolution};

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Pose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("IK did not converge after {iterations} iterations (position error {pos_error:.3e} m, rotation error {rot_error:.3e} rad)")]
    NoConvergence {
        best: JointVector,
        pos_error: f64,
        rot_error: f64,
        iterations: usize,
    },
    #[error("degenerate joint calibration: raw_at_min == raw_at_max")]
    DegenerateCalibration,
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
}

/// Joint angles in radians.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub Vec<f64>);

impl Deref for JointVector {
    type Target = Vec<f64>;

    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

impl DerefMut for JointVector {
    fn deref_mut(&mut self) -> &mut Vec<f64> {
        &mut self.0
    }
}

impl From<Vec<f64>> for JointVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn wrapped(&self) -> Self {
        Self(self.0.iter().map(|a| wrap_angle(*a)).collect())
    }

    /// Euclidean joint-space distance.
    pub fn distance(&self, other: &JointVector) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &JointVector) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn lerp(&self, other: &JointVector, t: f64) -> JointVector {
        Self(self.iter().zip(other.iter()).map(|(a, b)| a + (b - a) * t).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    pub min: f64,
    pub max: f64,
}

impl JointLimit {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, a: f64) -> bool {
        a >= self.min && a <= self.max
    }

    pub fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.min, self.max)
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}

/// Collision capsule in a link frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkCapsule {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

impl LinkCapsule {
    pub fn new(a: [f64; 3], b: [f64; 3], radius: f64) -> Self {
        Self { a, b, radius }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    /// Fixed transform from the previous link frame to this joint.
    pub offset: Pose,
    /// Joint rotation axis in this link's frame (unit).
    pub axis: [f64; 3],
    #[serde(default)]
    pub capsules: Vec<LinkCapsule>,
}

impl Link {
    pub fn axis(&self) -> Vector3<f64> {
        Vector3::from(self.axis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub links: Vec<Link>,
    pub joint_limits: Vec<JointLimit>,
    /// Last link frame to end-effector (tool centre point).
    #[serde(default)]
    pub tool_offset: Pose,
    pub reach: f64,
    /// Link index pairs exempt from self-collision checks.
    #[serde(default)]
    pub self_collision_skip: Vec<(usize, usize)>,
}

impl ArmModel {
    pub fn dof(&self) -> usize {
        self.links.len()
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let n = self.links.len();
        if n == 0 {
            return Err(KinematicsError::InvalidModel("arm needs at least one joint".into()));
        }
        if self.joint_limits.len() != n {
            return Err(KinematicsError::InvalidModel(format!(
                "joint_limits has {} entries for {n} links",
                self.joint_limits.len()
            )));
        }
        for (i, l) in self.joint_limits.iter().enumerate() {
            if !(l.min < l.max) {
                return Err(KinematicsError::InvalidModel(format!("joint_limits[{i}]: min must be < max")));
            }
        }
        for (i, link) in self.links.iter().enumerate() {
            let a = link.axis();
            if (a.norm() - 1.0).abs() > 1e-6 {
                return Err(KinematicsError::InvalidModel(format!("links[{i}].axis is not a unit vector")));
            }
            if link.capsules.iter().any(|c| c.radius <= 0.0) {
                return Err(KinematicsError::InvalidModel(format!("links[{i}]: capsule radius must be > 0")));
            }
        }
        if !(self.reach > 0.0) {
            return Err(KinematicsError::InvalidModel("reach must be > 0".into()));
        }
        Ok(())
    }

    fn check_dim(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch { expected: self.dof(), got: q.len() });
        }
        Ok(())
    }

    /// Per-link poses in the base frame followed by the end-effector pose
    /// (length `dof + 1`).
    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Vec<Pose>, KinematicsError> {
        self.check_dim(q)?;
        let mut poses = Vec::with_capacity(self.dof() + 1);
        let mut cur = Pose::identity();
        for (link, angle) in self.links.iter().zip(q) {
            cur = cur
                .compose(&link.offset)
                .compose(&Pose::from_axis_angle(&link.axis(), *angle));
            poses.push(cur);
        }
        poses.push(cur.compose(&self.tool_offset));
        Ok(poses)
    }

    pub fn end_effector(&self, q: &[f64]) -> Result<Pose, KinematicsError> {
        Ok(*self.forward_kinematics(q)?.last().expect("non-empty chain"))
    }

    /// Geometric Jacobian of the end-effector: rows 0..3 linear velocity
    /// (m/rad), rows 3..6 angular velocity (rad/rad), both in the base frame.
    pub fn jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>, KinematicsError> {
        let poses = self.forward_kinematics(q)?;
        Ok(self.jacobian_from_poses(&poses))
    }

    pub(crate) fn jacobian_from_poses(&self, poses: &[Pose]) -> DMatrix<f64> {
        let n = self.dof();
        let ee = poses[n].translation;
        let mut j = DMatrix::zeros(6, n);
        for (i, link) in self.links.iter().enumerate() {
            let z = poses[i].transform_vector(&link.axis());
            let lin = z.cross(&(ee - poses[i].translation));
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        j
    }

    /// Wraps every angle into (−π, π] and clamps to the joint limits.
    pub fn clamp_to_limits(&self, q: &mut [f64]) {
        for (a, l) in q.iter_mut().zip(&self.joint_limits) {
            *a = l.clamp(wrap_angle(*a));
        }
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.dof()
            && q.iter().zip(&self.joint_limits).all(|(a, l)| l.contains(wrap_angle(*a)))
    }

    /// Capsule endpoints for every link in the base frame:
    /// `(link index, a, b, radius)`.
    pub fn world_capsules(&self, poses: &[Pose]) -> Vec<(usize, Vector3<f64>, Vector3<f64>, f64)> {
        let mut out = Vec::new();
        for (i, link) in self.links.iter().enumerate() {
            for c in &link.capsules {
                out.push((
                    i,
                    poses[i].transform_point(&Vector3::from(c.a)),
                    poses[i].transform_point(&Vector3::from(c.b)),
                    c.radius,
                ));
            }
        }
        out
    }

    pub fn skips_self_pair(&self, i: usize, j: usize) -> bool {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        b - a <= 1 || self.self_collision_skip.iter().any(|&(x, y)| (x.min(y), x.max(y)) == (a, b))
    }

    /// Seven-joint hydraulic arm with 1.3 m reach: shoulder yaw/pitch, elbow,
    /// forearm roll, wrist pitch/yaw, tool roll. The end-effector z axis is
    /// the gripper approach direction.
    pub fn kraft_like() -> Self {
        let deg = PI / 180.0;
        let x = [1.0, 0.0, 0.0];
        let y = [0.0, 1.0, 0.0];
        let z = [0.0, 0.0, 1.0];
        let mk = |name: &str, offset: Pose, axis: [f64; 3], caps: Vec<LinkCapsule>| Link {
            name: name.into(),
            offset,
            axis,
            capsules: caps,
        };
        let links = vec![
            mk("shoulder_yaw", Pose::identity(), z, vec![LinkCapsule::new([0.0, 0.0, 0.06], [0.0, 0.0, 0.15], 0.06)]),
            mk(
                "shoulder_pitch",
                Pose::from_translation(0.0, 0.0, 0.15),
                y,
                vec![LinkCapsule::new([0.0, 0.0, 0.0], [0.55, 0.0, 0.0], 0.05)],
            ),
            mk(
                "elbow",
                Pose::from_translation(0.55, 0.0, 0.0),
                y,
                vec![LinkCapsule::new([0.04, 0.0, 0.0], [0.25, 0.0, 0.0], 0.045)],
            ),
            mk(
                "forearm_roll",
                Pose::from_translation(0.25, 0.0, 0.0),
                x,
                vec![LinkCapsule::new([0.0, 0.0, 0.0], [0.25, 0.0, 0.0], 0.04)],
            ),
            mk(
                "wrist_pitch",
                Pose::from_translation(0.25, 0.0, 0.0),
                y,
                vec![LinkCapsule::new([0.0, 0.0, 0.0], [0.1, 0.0, 0.0], 0.035)],
            ),
            mk(
                "wrist_yaw",
                Pose::from_translation(0.1, 0.0, 0.0),
                z,
                vec![LinkCapsule::new([0.0, 0.0, 0.0], [0.05, 0.0, 0.0], 0.035)],
            ),
            mk(
                "tool_roll",
                Pose::from_translation(0.05, 0.0, 0.0),
                x,
                vec![LinkCapsule::new([0.0, 0.0, 0.0], [0.07, 0.0, 0.0], 0.035)],
            ),
        ];
        let joint_limits = [170.0, 100.0, 150.0, 170.0, 110.0, 110.0, 175.0]
            .iter()
            .map(|l| JointLimit::new(-l * deg, l * deg))
            .collect();
        Self {
            links,
            joint_limits,
            tool_offset: Pose::new(Pose::rot_y(PI / 2.0).rotation, Vector3::new(0.1, 0.0, 0.0)),
            reach: 1.3,
            self_collision_skip: vec![(3, 5), (4, 6)],
        }
    }

    /// Planar chain rotating about z with links of the given lengths along x.
    pub fn planar(lengths: &[f64], radius: f64) -> Self {
        let mut links = Vec::new();
        let mut prev = 0.0;
        for (i, len) in lengths.iter().enumerate() {
            links.push(Link {
                name: format!("link{i}"),
                offset: Pose::from_translation(prev, 0.0, 0.0),
                axis: [0.0, 0.0, 1.0],
                capsules: if radius > 0.0 {
                    vec![LinkCapsule::new([0.0; 3], [*len, 0.0, 0.0], radius)]
                } else {
                    vec![]
                },
            });
            prev = *len;
        }
        Self {
            joint_limits: vec![JointLimit::new(-PI, PI); lengths.len()],
            links,
            tool_offset: Pose::from_translation(prev, 0.0, 0.0),
            reach: lengths.iter().sum(),
            self_collision_skip: vec![],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_q(model: &ArmModel, rng: &mut impl Rng) -> Vec<f64> {
        model.joint_limits.iter().map(|l| rng.random_range(l.min..l.max)).collect()
    }

    #[test]
    fn stretched_chain_reaches_sum_of_lengths() {
        let m = ArmModel::planar(&[0.3, 0.5, 0.2], 0.0);
        let ee = m.end_effector(&[0.0; 3]).unwrap();
        assert_relative_eq!(ee.translation, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn planar_two_link_by_hand() {
        let m = ArmModel::planar(&[1.0, 1.0], 0.0);
        let ee = m.end_effector(&[FRAC_PI_2, -FRAC_PI_2]).unwrap();
        // elbow at (cos 90°, sin 90°) = (0, 1); second link points along +x
        assert_relative_eq!(ee.translation, Vector3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn fk_is_two_pi_periodic() {
        let m = ArmModel::kraft_like();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_q(&m, &mut rng);
        for i in 0..m.dof() {
            let mut q2 = q.clone();
            q2[i] += 2.0 * PI;
            let a = m.end_effector(&q).unwrap();
            let b = m.end_effector(&q2).unwrap();
            assert!(a.approx_eq(&b, 1e-12));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = ArmModel::kraft_like();
        assert_eq!(
            m.forward_kinematics(&[0.0; 3]).unwrap_err(),
            KinematicsError::DimensionMismatch { expected: 7, got: 3 }
        );
        assert!(m.jacobian(&[0.0; 8]).is_err());
    }

    #[test]
    fn kraft_model_is_valid_with_nominal_reach() {
        let m = ArmModel::kraft_like();
        m.validate().unwrap();
        assert_eq!(m.dof(), 7);
        // fully stretched horizontally, measured from the shoulder pitch axis
        let q = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let ee = m.end_effector(&q).unwrap();
        assert_relative_eq!(ee.translation.x, 1.3, epsilon = 1e-12);
        assert_relative_eq!(ee.translation.z, 0.15, epsilon = 1e-12);
    }

    #[test]
    fn single_joint_linear_column() {
        let m = ArmModel::planar(&[1.0], 0.0);
        let j = m.jacobian(&[0.0]).unwrap();
        assert_relative_eq!(j[(0, 0)], 0.0);
        assert_relative_eq!(j[(1, 0)], 1.0);
        assert_relative_eq!(j[(2, 0)], 0.0);
        assert_relative_eq!(j[(5, 0)], 1.0);
    }

    #[test]
    fn stretched_planar_arm_is_singular_in_plane() {
        let m = ArmModel::planar(&[1.0, 1.0], 0.0);
        let j = m.jacobian(&[0.3, 0.0]).unwrap();
        let planar = j.rows(0, 2).into_owned();
        let sv = planar.svd(false, false).singular_values;
        assert!(sv.min() < 1e-12, "singular values {sv}");
    }

    /// Central finite differences of FK position.
    fn fd_position_jacobian(m: &ArmModel, q: &[f64], h: f64) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(3, q.len());
        for i in 0..q.len() {
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[i] += h;
            qm[i] -= h;
            let d = (m.end_effector(&qp).unwrap().translation - m.end_effector(&qm).unwrap().translation)
                / (2.0 * h);
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&d);
        }
        j
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = ArmModel::kraft_like();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let q = random_q(&m, &mut rng);
            let j = m.jacobian(&q).unwrap();
            let fd = fd_position_jacobian(&m, &q, 1e-6);
            let lin = j.rows(0, 3).into_owned();
            let rel = (&lin - &fd).norm() / fd.norm().max(1e-12);
            assert!(rel < 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn angular_jacobian_matches_rotation_differences() {
        let m = ArmModel::kraft_like();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q = random_q(&m, &mut rng);
        let j = m.jacobian(&q).unwrap();
        let h = 1e-6;
        for i in 0..m.dof() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let rp = m.end_effector(&qp).unwrap().rotation;
            let rm = m.end_effector(&qm).unwrap().rotation;
            let w = (rp * rm.inverse()).scaled_axis() / (2.0 * h);
            for k in 0..3 {
                assert_relative_eq!(j[(3 + k, i)], w[k], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn limits_wrap_then_clamp() {
        let m = ArmModel::kraft_like();
        let mut q = vec![2.0 * PI + 0.1, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        m.clamp_to_limits(&mut q);
        assert_relative_eq!(q[0], 0.1, epsilon = 1e-12);
        assert_relative_eq!(q[1], m.joint_limits[1].max);
        assert!(m.within_limits(&q));
    }

    #[test]
    fn invalid_models_rejected() {
        let mut m = ArmModel::kraft_like();
        m.joint_limits[2] = JointLimit::new(1.0, -1.0);
        assert!(m.validate().is_err());
        let mut m = ArmModel::kraft_like();
        m.reach = 0.0;
        assert!(m.validate().is_err());
        let mut m = ArmModel::kraft_like();
        m.links[0].axis = [0.0, 0.0, 2.0];
        assert!(m.validate().is_err());
    }
}
