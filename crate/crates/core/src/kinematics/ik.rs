//! Damped least-squares (Levenberg) inverse kinematics.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ArmModel, JointVector, KinematicsError};
use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkParams {
    pub tol_pos: f64,
    pub tol_rot: f64,
    pub max_iters: usize,
    pub initial_damping: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            tol_pos: 1e-5,
            tol_rot: 1e-4,
            max_iters: 200,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: JointVector,
    pub iterations: usize,
    pub pos_error: f64,
    pub rot_error: f64,
}

const MAX_DAMPING: f64 = 1e8;
const MIN_DAMPING: f64 = 1e-12;

/// Pose residual `[Δp; Δθ]` in the base frame and its two norms.
fn residual(model: &ArmModel, target: &Pose, q: &[f64]) -> (Vec<Pose>, DVector<f64>) {
    let poses = model.forward_kinematics(q).expect("dimension checked by caller");
    let ee = poses[model.dof()];
    let dp: Vector3<f64> = target.translation - ee.translation;
    let dr = (target.rotation * ee.rotation.inverse()).scaled_axis();
    let e = DVector::from_iterator(6, dp.iter().chain(dr.iter()).copied());
    (poses, e)
}

fn split_norms(e: &DVector<f64>) -> (f64, f64) {
    (e.rows(0, 3).norm(), e.rows(3, 3).norm())
}

/// Solves for joint angles placing the end-effector at `target`, starting
/// from `seed`. The result is wrapped into (−π, π] and within limits.
pub fn solve_ik(
    model: &ArmModel,
    target: &Pose,
    seed: &JointVector,
    params: &IkParams,
) -> Result<IkSolution, KinematicsError> {
    let n = model.dof();
    if seed.len() != n {
        return Err(KinematicsError::DimensionMismatch { expected: n, got: seed.len() });
    }
    let mut q = seed.0.clone();
    model.clamp_to_limits(&mut q);
    let (mut poses, mut e) = residual(model, target, &q);
    let mut cost = e.norm_squared();
    let mut lambda = params.initial_damping;
    let converged = |e: &DVector<f64>| {
        let (p, r) = split_norms(e);
        p <= params.tol_pos && r <= params.tol_rot
    };

    for iter in 0..params.max_iters {
        if converged(&e) {
            let (pos_error, rot_error) = split_norms(&e);
            return Ok(IkSolution { q: JointVector(q), iterations: iter, pos_error, rot_error });
        }
        let j = model.jacobian_from_poses(&poses);
        let jt = j.transpose();
        let h = &jt * &j;
        let g = &jt * &e;
        let mut improved = false;
        while lambda <= MAX_DAMPING {
            let a = &h + DMatrix::identity(n, n) * lambda;
            let Some(dq) = a.cholesky().map(|c| c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = q.iter().zip(dq.iter()).map(|(a, d)| a + d).collect();
            model.clamp_to_limits(&mut trial);
            let (tp, te) = residual(model, target, &trial);
            let tc = te.norm_squared();
            if tc < cost {
                q = trial;
                poses = tp;
                e = te;
                cost = tc;
                lambda = (lambda / 10.0).max(MIN_DAMPING);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let (pos_error, rot_error) = split_norms(&e);
    if converged(&e) {
        return Ok(IkSolution { q: JointVector(q), iterations: params.max_iters, pos_error, rot_error });
    }
    Err(KinematicsError::NoConvergence {
        best: JointVector(q),
        pos_error,
        rot_error,
        iterations: params.max_iters,
    })
}

/// Tries `seed` first, then up to `restarts` uniformly random seeds within
/// the joint limits. On total failure returns the attempt with the lowest
/// residual.
pub fn solve_ik_with_restarts(
    model: &ArmModel,
    target: &Pose,
    seed: &JointVector,
    params: &IkParams,
    restarts: usize,
    rng: &mut impl Rng,
) -> Result<IkSolution, KinematicsError> {
    let mut best: Option<KinematicsError> = None;
    let score = |err: &KinematicsError| match err {
        KinematicsError::NoConvergence { pos_error, rot_error, .. } => pos_error + rot_error,
        _ => f64::INFINITY,
    };
    for attempt in 0..=restarts {
        let s = if attempt == 0 {
            seed.clone()
        } else {
            JointVector(model.joint_limits.iter().map(|l| rng.random_range(l.min..=l.max)).collect())
        };
        match solve_ik(model, target, &s, params) {
            Ok(sol) => return Ok(sol),
            Err(e @ KinematicsError::NoConvergence { .. }) => {
                if best.as_ref().map_or(true, |b| score(&e) < score(b)) {
                    best = Some(e);
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(best.expect("at least one attempt"))
}
