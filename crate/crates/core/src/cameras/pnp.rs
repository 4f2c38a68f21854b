//! Planar four-corner pose estimation: homography initialisation followed by
//! Levenberg–Marquardt refinement of the reprojection error.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, UnitQuaternion, Vector3, Vector6};

use super::{tag_corners, Camera, CameraError, Pixel};
use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagPoseEstimate {
    /// Tag frame expressed in the camera frame.
    pub pose: Pose,
    /// Root-mean-square corner reprojection distance, pixels.
    pub residual: f64,
    pub iterations: usize,
}

const MAX_ITERS: usize = 100;

fn check_corners(corners: &[Pixel; 4]) -> Result<(), CameraError> {
    let p: Vec<Vector3<f64>> = corners.iter().map(|c| Vector3::new(c[0], c[1], 0.0)).collect();
    let mut scale: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            scale = scale.max((p[i] - p[j]).norm_squared());
        }
    }
    if !scale.is_finite() || scale < 1e-12 {
        return Err(CameraError::DegenerateCorners);
    }
    for skip in 0..4 {
        let t: Vec<&Vector3<f64>> = (0..4).filter(|&k| k != skip).map(|k| &p[k]).collect();
        let area = (t[1] - t[0]).cross(&(t[2] - t[0])).norm() / 2.0;
        if area / scale < 1e-4 {
            return Err(CameraError::DegenerateCorners);
        }
    }
    Ok(())
}

/// Initial pose from the plane-to-normalized-image homography.
fn homography_init(camera: &Camera, corners: &[Pixel; 4], size: f64) -> Result<Pose, CameraError> {
    let h = size / 2.0;
    let model = tag_corners(2.0);
    let mut a = DMatrix::<f64>::zeros(8, 9);
    for (k, (c, px)) in model.iter().zip(corners).enumerate() {
        let ray = camera.unproject(px);
        if ray.z < 1e-3 {
            return Err(CameraError::NoConvergence { residual: f64::INFINITY });
        }
        let (x, y) = (ray.x / ray.z, ray.y / ray.z);
        let (bx, by) = (c.x, c.y);
        let r0 = [bx, by, 1.0, 0.0, 0.0, 0.0, -x * bx, -x * by, -x];
        let r1 = [0.0, 0.0, 0.0, bx, by, 1.0, -y * bx, -y * by, -y];
        for j in 0..9 {
            a[(2 * k, j)] = r0[j];
            a[(2 * k + 1, j)] = r1[j];
        }
    }
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty");
    let v = eig.eigenvectors.column(imin);
    // undo the unit-square scaling of the model points
    let hm = Matrix3::new(v[0] / h, v[1] / h, v[2], v[3] / h, v[4] / h, v[5], v[6] / h, v[7] / h, v[8]);
    let (h1, h2, h3) = (hm.column(0).into_owned(), hm.column(1).into_owned(), hm.column(2).into_owned());
    let mut lambda = 2.0 / (h1.norm() + h2.norm());
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let t = h3 * lambda;
    let approx = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let svd = approx.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    Ok(Pose::from_rotation_matrix(&r, t))
}

fn residuals(camera: &Camera, pose: &Pose, observations: &[[Pixel; 4]], model: &[Vector3<f64>; 4]) -> Option<DVector<f64>> {
    let mut r = DVector::zeros(8 * observations.len());
    let projected: Vec<Pixel> = model
        .iter()
        .map(|p| camera.project(&pose.transform_point(p)))
        .collect::<Result<_, _>>()
        .ok()?;
    for (o, obs) in observations.iter().enumerate() {
        for k in 0..4 {
            r[8 * o + 2 * k] = projected[k][0] - obs[k][0];
            r[8 * o + 2 * k + 1] = projected[k][1] - obs[k][1];
        }
    }
    Some(r)
}

fn perturb(pose: &Pose, d: &Vector6<f64>) -> Pose {
    let dr = UnitQuaternion::from_scaled_axis(Vector3::new(d[0], d[1], d[2]));
    Pose::new(dr * pose.rotation, pose.translation + Vector3::new(d[3], d[4], d[5]))
}

/// Single-detection tag pose.
pub fn estimate_tag_pose(camera: &Camera, corners: &[Pixel; 4], tag_size: f64) -> Result<TagPoseEstimate, CameraError> {
    if !(tag_size > 0.0) {
        return Err(CameraError::InvalidModel("tag size must be positive".into()));
    }
    check_corners(corners)?;
    let init = homography_init(camera, corners, tag_size)?;
    refine_tag_pose(camera, std::slice::from_ref(corners), tag_size, &init)
}

/// Least-squares pose of a static tag from several detections of it,
/// starting at `init`.
pub fn refine_tag_pose(
    camera: &Camera,
    observations: &[[Pixel; 4]],
    tag_size: f64,
    init: &Pose,
) -> Result<TagPoseEstimate, CameraError> {
    if observations.is_empty() {
        return Err(CameraError::DegenerateCorners);
    }
    let model = tag_corners(tag_size);
    let n_corners = (4 * observations.len()) as f64;
    let mut pose = *init;
    let Some(mut r) = residuals(camera, &pose, observations, &model) else {
        return Err(CameraError::NoConvergence { residual: f64::INFINITY });
    };
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let step = 1e-7;
    let mut iterations = 0;
    while iterations < MAX_ITERS && cost > 1e-24 {
        iterations += 1;
        let mut j = DMatrix::zeros(r.len(), 6);
        for k in 0..6 {
            let mut d = Vector6::zeros();
            d[k] = step;
            let plus = residuals(camera, &perturb(&pose, &d), observations, &model);
            let minus = residuals(camera, &perturb(&pose, &(-d)), observations, &model);
            let (Some(p), Some(m)) = (plus, minus) else {
                return Err(CameraError::NoConvergence { residual: (cost / n_corners).sqrt() });
            };
            j.set_column(k, &((p - m) / (2.0 * step)));
        }
        let jt = j.transpose();
        let h = &jt * &j;
        let g = &jt * &r;
        let mut accepted = false;
        while lambda < 1e12 {
            let mut a = h.clone();
            for i in 0..6 {
                a[(i, i)] += lambda * (1.0 + h[(i, i)]);
            }
            let Some(delta) = a.cholesky().map(|c| -c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let d = Vector6::from_iterator(delta.iter().copied());
            let trial = perturb(&pose, &d);
            if let Some(tr) = residuals(camera, &trial, observations, &model) {
                let tc = tr.norm_squared();
                if tc < cost {
                    let converged = d.norm() < 1e-13 || (cost - tc) <= 1e-15 * cost;
                    pose = trial;
                    r = tr;
                    cost = tc;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if converged {
                        return Ok(TagPoseEstimate { pose, residual: (cost / n_corners).sqrt(), iterations });
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    let residual = (cost / n_corners).sqrt();
    if !residual.is_finite() {
        return Err(CameraError::NoConvergence { residual });
    }
    Ok(TagPoseEstimate { pose, residual, iterations })
}
