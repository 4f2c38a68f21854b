//! Collision checking, joint-space planning, trajectory execution and the
//! confirmation-gated pick-and-place executive.

pub mod collision;
pub mod execute;
pub mod executive;
pub mod problem;
pub mod rrt;
pub mod task;

pub use collision::{AttachedBody, CollisionWorld, Contact, Verdict, VoxelGrid, DEFAULT_VOXEL_RESOLUTION, VOXEL_NAME};
pub use execute::{execute, Controller, ExecStatus, ExecutionReport, MonitorParams, WaypointRecord};
pub use executive::{marker_above, CycleOutcome, Executive, ExecutiveConfig, ExecutiveError, GraspPlan, Observer, Stage};
pub use problem::PlanningProblem;
pub use rrt::{ik_goal, plan_rrt_star, plan_to_pose, Plan, PlanStats, PlannerParams, Trajectory, Waypoint, IK_SEEDS, JOINT_SPEED};
pub use task::{Phase, TaskEvent, TaskState, Transition};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanningError {
    #[error("expected {expected} joints, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("start configuration in collision: {0:?}")]
    StartInCollision(Verdict),
    #[error("goal configuration in collision: {0:?}")]
    GoalInCollision(Verdict),
    #[error("no path found after {iterations} iterations")]
    Timeout { iterations: usize },
    #[error("inverse kinematics failed from every seed")]
    IkFailed,
    #[error("every inverse kinematics solution is in collision")]
    NoFreeIkSolution,
}
