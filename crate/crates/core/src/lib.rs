//! Deterministic desk-scale simulator and autonomy stack for supervised
//! manipulation with a vehicle-mounted 7-DoF arm.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: rigid transforms, the named transform tree and the shape
//!   primitives shared by ray casting and collision checking.
//! - [`kinematics`]: serial-arm model, forward kinematics, Jacobian,
//!   damped-least-squares IK and joint-feedback calibration.
//! - [`cameras`]: pinhole and equidistant-fisheye models, stereo
//!   triangulation and planar tag pose estimation.
//! - [`perception`]: camera-origin tag tracking, tool localisation, door-angle
//!   estimation and simulated stereo point clouds.
//! - [`calibration`]: hand-eye and stereo-to-base calibration plus the
//!   trajectory / actuator evaluation suite.
//! - [`simulation`]: the seeded world, hydraulic actuator model, synthetic
//!   observations and scene files.
//! - [`planning`]: collision world, RRT*, execution monitoring, the
//!   confirmation-gated task state machine and the pick-and-place executive.
//! - [`language`]: parse-tree grounding with a distributed correspondence
//!   graph.

pub mod calibration;
pub mod cameras;
pub mod geometry;
pub mod kinematics;
pub mod language;
pub mod perception;
pub mod planning;
pub mod simulation;
pub mod sync;

pub use geometry::{Pose, TransformTree};
pub use kinematics::{ArmModel, JointVector};
