//! Fiducial tracking, tool localisation, door-angle estimation and
//! simulated stereo point clouds.

mod cloud;
mod doors;
mod tags;
mod tools;

pub use cloud::{simulate_point_cloud, PointCloud, PointCloudParams};
pub use doors::{door_angles_from_graph, door_translations, estimate_door_angles, DoorKinematics};
pub use tags::{TagGraph, TagUpdateReport, TrackedTag};
pub use tools::{ToolEstimate, ToolLocalizer};

use thiserror::Error;

use crate::cameras::CameraError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("detection from camera `{got}` but the graph origin is `{expected}`")]
    WrongCamera { expected: String, got: String },
    #[error("no size known for tag {0}")]
    UnknownTag(u32),
    #[error("tool `{0}` has never been observed")]
    NeverSeen(String),
    #[error("door geometry is degenerate (offset shorter than 1e-6 m in the X-Y plane)")]
    DegenerateGeometry,
    #[error("frame lookup failed: {0}")]
    Frames(String),
}
