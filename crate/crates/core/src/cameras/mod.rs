//! Camera projection models, stereo triangulation and planar-tag pose
//! estimation.
//!
//! Camera frames follow the optical convention: +z along the optical axis,
//! +x to the right in the image, +y down. Intrinsics are stated at full
//! sensor resolution; `binning` divides every pixel coordinate.

mod detection;
mod pnp;
mod stereo;

pub use detection::{tag_corners, TagDetection};
pub use pnp::{estimate_tag_pose, refine_tag_pose, TagPoseEstimate};
pub use stereo::StereoRig;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("point is outside the fisheye field of view")]
    OutsideFov,
    #[error("disparity must be positive, got {0}")]
    NonPositiveDisparity(f64),
    #[error("rows differ by {0:.3} px, beyond the rectification tolerance")]
    EpipolarViolation(f64),
    #[error("tag corners are degenerate (collinear or coincident)")]
    DegenerateCorners,
    #[error("pose refinement did not converge (residual {residual:.3} px)")]
    NoConvergence { residual: f64 },
    #[error("invalid camera model: {0}")]
    InvalidModel(String),
}

pub type Pixel = [f64; 2];

fn default_binning() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_binning")]
    pub binning: u32,
}

impl PinholeModel {
    /// 6 mm lens on a 2448×2048 sensor with 3.45 µm pixels.
    pub fn nominal_stereo() -> Self {
        Self {
            fx: 1739.0,
            fy: 1739.0,
            cx: 1224.0,
            cy: 1024.0,
            width: 2448,
            height: 2048,
            binning: 1,
        }
    }

    pub fn with_binning(mut self, binning: u32) -> Self {
        self.binning = binning;
        self
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::InvalidModel("focal lengths must be positive".into()));
        }
        if self.binning == 0 {
            return Err(CameraError::InvalidModel("binning must be >= 1".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(CameraError::InvalidModel("principal point outside image".into()));
        }
        Ok(())
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Pixel, CameraError> {
        if p.z <= 0.0 {
            return Err(CameraError::BehindCamera);
        }
        let b = self.binning as f64;
        Ok([(self.fx * p.x / p.z + self.cx) / b, (self.fy * p.y / p.z + self.cy) / b])
    }

    /// Unit ray through a (binned) pixel.
    pub fn unproject(&self, px: &Pixel) -> Vector3<f64> {
        let b = self.binning as f64;
        Vector3::new((px[0] * b - self.cx) / self.fx, (px[1] * b - self.cy) / self.fy, 1.0).normalize()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisheyeModel {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Usable half field of view, radians.
    pub max_theta: f64,
    #[serde(default = "default_binning")]
    pub binning: u32,
}

impl FisheyeModel {
    /// 2.7 mm equidistant lens on a 2448×2048 sensor with 3.45 µm pixels.
    pub fn nominal() -> Self {
        Self {
            f: 783.0,
            cx: 1224.0,
            cy: 1024.0,
            width: 2448,
            height: 2048,
            max_theta: 85f64.to_radians(),
            binning: 1,
        }
    }

    pub fn with_binning(mut self, binning: u32) -> Self {
        self.binning = binning;
        self
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.f > 0.0) {
            return Err(CameraError::InvalidModel("focal length must be positive".into()));
        }
        if !(self.max_theta > 0.0 && self.max_theta < std::f64::consts::PI) {
            return Err(CameraError::InvalidModel("max_theta must lie in (0, pi)".into()));
        }
        if self.binning == 0 {
            return Err(CameraError::InvalidModel("binning must be >= 1".into()));
        }
        Ok(())
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Pixel, CameraError> {
        let rho = (p.x * p.x + p.y * p.y).sqrt();
        let theta = rho.atan2(p.z);
        if theta > self.max_theta || p.norm() == 0.0 {
            return Err(CameraError::OutsideFov);
        }
        let b = self.binning as f64;
        if rho == 0.0 {
            return Ok([self.cx / b, self.cy / b]);
        }
        let r = self.f * theta;
        Ok([(self.cx + r * p.x / rho) / b, (self.cy + r * p.y / rho) / b])
    }

    pub fn unproject(&self, px: &Pixel) -> Vector3<f64> {
        let b = self.binning as f64;
        let dx = px[0] * b - self.cx;
        let dy = px[1] * b - self.cy;
        let r = (dx * dx + dy * dy).sqrt();
        if r == 0.0 {
            return Vector3::z();
        }
        let theta = r / self.f;
        let s = theta.sin();
        Vector3::new(s * dx / r, s * dy / r, theta.cos())
    }
}

/// Either supported projection model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Camera {
    Pinhole(PinholeModel),
    Fisheye(FisheyeModel),
}

impl Camera {
    pub fn project(&self, p: &Vector3<f64>) -> Result<Pixel, CameraError> {
        match self {
            Camera::Pinhole(c) => c.project(p),
            Camera::Fisheye(c) => c.project(p),
        }
    }

    pub fn unproject(&self, px: &Pixel) -> Vector3<f64> {
        match self {
            Camera::Pinhole(c) => c.unproject(px),
            Camera::Fisheye(c) => c.unproject(px),
        }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        match self {
            Camera::Pinhole(c) => c.validate(),
            Camera::Fisheye(c) => c.validate(),
        }
    }

    /// Full-resolution focal length in pixels.
    pub fn focal(&self) -> f64 {
        match self {
            Camera::Pinhole(c) => c.fx,
            Camera::Fisheye(c) => c.f,
        }
    }

    pub fn binning(&self) -> u32 {
        match self {
            Camera::Pinhole(c) => c.binning,
            Camera::Fisheye(c) => c.binning,
        }
    }

    /// Focal length in output (binned) pixels.
    pub fn effective_focal(&self) -> f64 {
        self.focal() / self.binning() as f64
    }

    /// Output image size `(width, height)` after binning.
    pub fn image_size(&self) -> (f64, f64) {
        let (w, h) = match self {
            Camera::Pinhole(c) => (c.width, c.height),
            Camera::Fisheye(c) => (c.width, c.height),
        };
        let b = self.binning() as f64;
        (w as f64 / b, h as f64 / b)
    }

    pub fn in_image(&self, px: &Pixel) -> bool {
        let (w, h) = self.image_size();
        px[0] >= 0.0 && px[0] < w && px[1] >= 0.0 && px[1] < h
    }
}

/// On-axis metric size of one pixel at `depth` meters.
pub fn metric_pixel_resolution(camera: &Camera, depth: f64) -> f64 {
    depth / camera.effective_focal()
}

/// Distance at which a fronto-parallel marker of `marker_size` meters spans
/// `min_pixels` pixels on axis.
pub fn max_detection_range(camera: &Camera, marker_size: f64, min_pixels: f64) -> f64 {
    camera.effective_focal() * marker_size / min_pixels
}
