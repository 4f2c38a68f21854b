//! Bootstrapped calibration chain (joint feedback, hand-eye, stereo to base)
//! and the evaluation statistics used to judge it.

mod handeye;
mod response;
mod trajectory;

pub use handeye::{
    calibrate_hand_eye, calibrate_stereo_to_base, pair_samples, HandEyeResult, HandEyeSample, MIN_AXIS_ANGLE,
    SYNC_TOLERANCE,
};
pub use response::{
    estimate_joint_response, parse_joint_log, JointLogRow, JointResponseProfile, ResponseParams, HISTOGRAM_BIN,
};
pub use trajectory::{align_rigid, evaluate_trajectories, parse_trajectory_log, ErrorStats, TimedPoint};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("need at least {needed} samples with distinct poses, got {got}")]
    InsufficientMotion { needed: usize, got: usize },
    #[error("relative rotations do not span two axes at least {min_deg} degrees apart")]
    DegenerateRotations { min_deg: f64 },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("trajectories do not overlap in time")]
    NoTemporalOverlap,
    #[error("only {got} settled samples (need {needed})")]
    InsufficientSettledSamples { got: usize, needed: usize },
    #[error("log line {line}: {message}")]
    BadLog { line: usize, message: String },
}
