use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{CameraError, Pixel, PinholeModel};

/// Row tolerance for rectified correspondences, pixels.
pub const EPIPOLAR_TOLERANCE: f64 = 2.0;

/// Rectified stereo pair. Coordinates are in the left camera frame; the
/// right camera sits at `+baseline` along the left x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub left: PinholeModel,
    pub right: PinholeModel,
    pub baseline: f64,
}

impl StereoRig {
    pub fn new(camera: PinholeModel, baseline: f64) -> Self {
        Self { left: camera, right: camera, baseline }
    }

    pub fn nominal() -> Self {
        Self::new(PinholeModel::nominal_stereo(), 0.2)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        self.left.validate()?;
        self.right.validate()?;
        if !(self.baseline > 0.0) {
            return Err(CameraError::InvalidModel("baseline must be positive".into()));
        }
        if self.left != self.right {
            return Err(CameraError::InvalidModel("rectified intrinsics must match".into()));
        }
        Ok(())
    }

    pub fn project_left(&self, p: &Vector3<f64>) -> Result<Pixel, CameraError> {
        self.left.project(p)
    }

    pub fn project_right(&self, p: &Vector3<f64>) -> Result<Pixel, CameraError> {
        self.right.project(&(p - Vector3::new(self.baseline, 0.0, 0.0)))
    }

    /// Focal length times baseline in output pixels·meters.
    pub fn fb(&self) -> f64 {
        self.left.fx / self.left.binning as f64 * self.baseline
    }

    /// Depth of a point with the given disparity (output pixels).
    pub fn depth_from_disparity(&self, d: f64) -> Result<f64, CameraError> {
        if !(d > 0.0) {
            return Err(CameraError::NonPositiveDisparity(d));
        }
        Ok(self.fb() / d)
    }

    pub fn triangulate(&self, ul: &Pixel, ur: &Pixel) -> Result<Vector3<f64>, CameraError> {
        let dy = (ul[1] - ur[1]).abs();
        if dy > EPIPOLAR_TOLERANCE {
            return Err(CameraError::EpipolarViolation(dy));
        }
        let z = self.depth_from_disparity(ul[0] - ur[0])?;
        Ok(self.back_project(ul, z))
    }

    /// Point at depth `z` on the left-camera ray through `ul`.
    pub fn back_project(&self, ul: &Pixel, z: f64) -> Vector3<f64> {
        let c = &self.left;
        let b = c.binning as f64;
        Vector3::new((ul[0] * b - c.cx) / c.fx * z, (ul[1] * b - c.cy) / c.fy * z, z)
    }
}
