//! Drives the task state machine against a simulator: perception updates,
//! per-step planning, confirmation-gated execution and direct operator
//! commands.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::collision::{AttachedBody, CollisionWorld};
use super::execute::{execute, Controller, ExecStatus, ExecutionReport, MonitorParams};
use super::rrt::{ik_goal, plan_rrt_star, PlannerParams, Trajectory};
use super::task::{Phase, TaskEvent, TaskState, Transition};
use super::PlanningError;
use crate::cameras::{Camera, StereoRig};
use crate::geometry::{Pose, Primitive, Shape};
use crate::kinematics::JointVector;
use crate::perception::{simulate_point_cloud, PointCloud, PointCloudParams, TagGraph, ToolLocalizer};
use crate::simulation::{Command, CommandSource, Simulator, ToolSpec};

/// Links that make up the gripper and may touch a tool being grasped.
pub const GRIPPER_LINKS: [&str; 2] = ["wrist_yaw", "tool_roll"];
/// Terrain primitive that holds the tools.
pub const TOOL_TRAY: &str = "tooltray";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutiveConfig {
    pub planner: PlannerParams,
    pub monitor: MonitorParams,
    /// Retreat of the pregrasp point along the handle +Z axis (m).
    pub pregrasp: f64,
    /// Add the stereo point cloud to the collision world.
    pub use_point_cloud: bool,
    pub cloud: PointCloudParams,
    /// Frames integrated by [`Executive::observe`].
    pub observe_frames: usize,
    pub wrist_camera: String,
    pub stereo_camera: String,
    /// Camera pose in the wrist frame.
    pub hand_eye: Option<Pose>,
}

impl Default for ExecutiveConfig {
    fn default() -> Self {
        Self {
            planner: PlannerParams { max_iterations: 1500, ..PlannerParams::default() },
            monitor: MonitorParams { final_corrections: 4, ..MonitorParams::default() },
            pregrasp: 0.05,
            use_point_cloud: true,
            cloud: PointCloudParams::default(),
            observe_frames: 10,
            wrist_camera: "fisheye".into(),
            stereo_camera: "stereo".into(),
            hand_eye: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecutiveError {
    #[error("no tool selected")]
    NoTool,
    #[error("unknown tool {0}")]
    UnknownTool(String),
    #[error("tool {0} has not been localized")]
    ToolNotLocalized(String),
    #[error("no sample marker set")]
    NoMarker,
    #[error("no tool is held")]
    NotHolding,
    #[error("unknown named pose {0}")]
    UnknownNamedPose(String),
    #[error("planning failed: {0}")]
    Planning(#[from] PlanningError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Move { trajectory: Trajectory },
    Gripper { close: bool },
}

/// Stages for one step of the task plus the combined trajectory shown to the
/// operator.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspPlan {
    pub stages: Vec<Stage>,
    pub display: Trajectory,
}

/// Called after every control tick and every task transition.
pub type Observer = Box<dyn FnMut(&Simulator, &TaskState) + Send>;

/// Streams setpoints under `source` and reports each tick to the observer.
struct Driver<'a> {
    sim: &'a mut Simulator,
    source: CommandSource,
    task: &'a TaskState,
    observer: Option<&'a mut Observer>,
}

impl Controller for Driver<'_> {
    fn dt(&self) -> f64 {
        self.sim.dt
    }
    fn send_setpoints(&mut self, q: &JointVector) {
        self.sim.apply(self.source, Command::Setpoints { q: q.0.clone() });
    }
    fn hold(&mut self) {
        Controller::hold(self.sim)
    }
    fn feedback(&self) -> JointVector {
        self.sim.feedback()
    }
    fn tick(&mut self) {
        self.sim.step();
        if let Some(o) = self.observer.as_mut() {
            o(self.sim, self.task);
        }
    }
}

pub struct Executive {
    pub sim: Simulator,
    pub task: TaskState,
    pub config: ExecutiveConfig,
    pub graph: TagGraph,
    pub localizer: ToolLocalizer,
    pub warnings: Vec<String>,
    pub reports: Vec<ExecutionReport>,
    /// `(phase, start, end)` simulation times of every confirmed execution.
    pub exec_windows: Vec<(Phase, f64, f64)>,
    /// Tool-tip to marker distance after each completed sample motion (m).
    pub sample_errors: Vec<f64>,
    staged: Option<GraspPlan>,
    /// Handle pose (world) the held tool was picked from.
    slot: Option<Pose>,
    stop: Arc<AtomicBool>,
    plans: u64,
    observer: Option<Observer>,
}

impl Executive {
    pub fn new(sim: Simulator, config: ExecutiveConfig) -> Self {
        let mut localizer = ToolLocalizer::new();
        for t in &sim.scene.tools {
            localizer.register(t.id.clone(), t.tag_id, t.mount_offset);
        }
        Self {
            graph: TagGraph::new(config.wrist_camera.clone()),
            sim,
            task: TaskState::new(),
            config,
            localizer,
            warnings: Vec::new(),
            reports: Vec::new(),
            exec_windows: Vec::new(),
            sample_errors: Vec::new(),
            staged: None,
            slot: None,
            stop: Arc::new(AtomicBool::new(false)),
            plans: 0,
            observer: None,
        }
    }

    /// Flag polled every control tick while a motion runs.
    pub fn stop_handle(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    pub fn set_observer(&mut self, observer: Option<Observer>) {
        self.observer = observer;
    }

    fn notify(&mut self) {
        if let Some(o) = self.observer.as_mut() {
            o(&self.sim, &self.task);
        }
    }

    /// Steps the simulation for `secs`, reporting each tick.
    fn run_for(&mut self, secs: f64) {
        for _ in 0..(secs / self.sim.dt).round() as usize {
            self.sim.step();
            self.notify();
        }
    }

    fn driver(&mut self, source: CommandSource) -> Driver<'_> {
        Driver { sim: &mut self.sim, source, task: &self.task, observer: self.observer.as_mut() }
    }

    pub fn phase(&self) -> Phase {
        self.task.phase
    }

    pub fn staged_plan(&self) -> Option<&GraspPlan> {
        self.staged.as_ref()
    }

    fn hand_eye(&self) -> Pose {
        self.config.hand_eye.unwrap_or_else(|| {
            self.sim.scene.camera(&self.config.wrist_camera).map(|c| c.mount).unwrap_or_default()
        })
    }

    /// Integrates `observe_frames` wrist-camera frames into the tag graph
    /// and refreshes every tool estimate.
    pub fn observe(&mut self) {
        let Some(cam) = self.sim.scene.camera(&self.config.wrist_camera).map(|c| c.camera) else {
            return;
        };
        let hand_eye = self.hand_eye();
        for _ in 0..self.config.observe_frames.max(1) {
            let obs = self.sim.observe();
            let sim = &self.sim;
            self.graph.update(obs.for_camera(&self.config.wrist_camera), &cam, |id| sim.tag_size(id));
            self.sim.step();
            self.notify();
        }
        let fk = self.sim.arm().forward_kinematics(&self.sim.feedback()).expect("feedback matches model");
        let frames = self.sim.frames();
        let ids: Vec<String> = self.sim.scene.tools.iter().map(|t| t.id.clone()).collect();
        for id in ids {
            if self.sim.held_tool() == Some(id.as_str()) {
                continue;
            }
            let _ = self.localizer.localize(&self.graph, &id, &fk, &hand_eye, &frames, self.sim.time());
        }
    }

    fn warn(&mut self, t: &Transition) {
        if let Some(w) = &t.warning {
            self.warnings.push(w.clone());
        }
    }

    fn advance(&mut self, event: &TaskEvent) -> bool {
        let t = self.task.advance(event);
        self.warn(&t);
        let ok = t.legal();
        self.task = t.state;
        self.notify();
        ok
    }

    /// Applies an operator event, running any planning or motion it
    /// triggers. Returns false when the event was illegal in the current
    /// phase.
    pub fn handle(&mut self, event: TaskEvent) -> bool {
        match &event {
            TaskEvent::GotoNamedPose { name } => {
                if !self.advance(&event) {
                    return false;
                }
                if let Err(e) = self.goto_named_pose(name) {
                    self.warnings.push(e.to_string());
                    self.task.last_error = Some(e.to_string());
                }
                true
            }
            TaskEvent::GripperOpen | TaskEvent::GripperClose => {
                if !self.advance(&event) {
                    return false;
                }
                let close = event == TaskEvent::GripperClose;
                self.sim.apply(CommandSource::Gripper, Command::Gripper { close });
                self.run_for(0.2);
                true
            }
            TaskEvent::Stop => {
                self.sim.apply(CommandSource::Stop, Command::Hold);
                // A stop that raced ahead of its motion is spent here.
                self.stop.store(false, Ordering::SeqCst);
                self.advance(&event)
            }
            TaskEvent::SetMarker { pose } => {
                if !self.advance(&event) {
                    return false;
                }
                self.sim.apply(CommandSource::Operator, Command::Marker { pose: Some(*pose) });
                true
            }
            TaskEvent::RequestPlan | TaskEvent::Retry => {
                if !self.advance(&event) {
                    return false;
                }
                self.run_planner();
                true
            }
            TaskEvent::Confirm => {
                if !self.advance(&event) {
                    return false;
                }
                self.run_execution();
                true
            }
            TaskEvent::Reject | TaskEvent::Abort => {
                let ok = self.advance(&event);
                if ok {
                    self.staged = None;
                }
                ok
            }
            _ => self.advance(&event),
        }
    }

    fn run_planner(&mut self) {
        let result = match self.task.phase {
            Phase::PlanGrasp => self.plan_grasp(),
            Phase::PlanSample => self.plan_sample(),
            Phase::PlanReturn => self.plan_return(),
            _ => return,
        };
        match result {
            Ok(plan) => {
                let display = plan.display.clone();
                self.staged = Some(plan);
                self.advance(&TaskEvent::PlanReady { plan: display });
            }
            Err(e) => {
                self.staged = None;
                self.advance(&TaskEvent::PlanFailed { error: e.to_string() });
            }
        }
    }

    fn run_execution(&mut self) {
        let t0 = self.sim.time();
        let phase = self.task.phase;
        self.execute_stages();
        self.exec_windows.push((phase, t0, self.sim.time()));
        if self.task.phase == Phase::SampleDone {
            self.sample_errors.push(self.tip_error().unwrap_or(f64::INFINITY));
        }
    }

    /// Distance between the held tool's true tip and the sample marker.
    pub fn tip_error(&self) -> Option<f64> {
        let id = self.sim.held_tool()?;
        let spec = self.sim.scene.tool(id)?;
        let tool = self.sim.world().tools.iter().find(|t| t.id == id)?;
        let marker = self.task.marker?;
        Some(tool.pose.compose(&spec.tip_offset).distance_to(&marker))
    }

    fn execute_stages(&mut self) {
        let Some(plan) = self.staged.take() else {
            self.advance(&TaskEvent::ExecFailed { error: "no staged plan".into() });
            return;
        };
        let phase = self.task.phase;
        for stage in &plan.stages {
            match stage {
                Stage::Move { trajectory } => {
                    debug_assert!(trajectory.is_valid());
                    let (monitor, stop) = (self.config.monitor, Arc::clone(&self.stop));
                    let report = execute(trajectory, &mut self.driver(CommandSource::Execution), &monitor, &stop);
                    let status = report.status.clone();
                    self.reports.push(report);
                    match status {
                        ExecStatus::Completed => {}
                        ExecStatus::Stopped { .. } => {
                            self.stop.store(false, Ordering::SeqCst);
                            self.advance(&TaskEvent::Stop);
                            return;
                        }
                        ExecStatus::DeviationExceeded { joint, deviation, .. } => {
                            let error = format!("joint {joint} deviated {:.2} deg", deviation.to_degrees());
                            self.advance(&TaskEvent::ExecFailed { error });
                            return;
                        }
                    }
                }
                Stage::Gripper { close } => {
                    let before = self.sim.held_tool().map(str::to_string);
                    self.sim.apply(CommandSource::Execution, Command::Gripper { close: *close });
                    self.run_for(0.2);
                    if *close {
                        let want = self.task.selected_tool.clone();
                        if self.sim.held_tool().map(str::to_string) != want {
                            self.advance(&TaskEvent::ExecFailed { error: "grasp missed the handle".into() });
                            return;
                        }
                        self.slot = want.as_deref().and_then(|id| self.localizer.estimate(id)).map(|e| e.handle_pose);
                    } else if before.is_some() {
                        self.slot = None;
                    }
                }
            }
        }
        if phase == Phase::ExecReturn {
            self.observe();
        }
        self.advance(&TaskEvent::ExecDone);
    }

    fn tool_spec(&self, id: &str) -> Result<ToolSpec, ExecutiveError> {
        self.sim.scene.tool(id).cloned().ok_or_else(|| ExecutiveError::UnknownTool(id.to_string()))
    }

    /// Static terrain, tool bodies at their latest estimates (or nominal pose
    /// when never seen) and, optionally, stereo voxels outside known bodies.
    /// The held tool is attached to the gripper rather than placed.
    pub fn collision_world(&self) -> CollisionWorld {
        let base = self.sim.base_pose();
        let held = self.sim.held_tool().map(str::to_string);
        let mut prims: Vec<Primitive> = self.sim.world().terrain.clone();
        for spec in &self.sim.scene.tools {
            if held.as_deref() == Some(spec.id.as_str()) {
                continue;
            }
            let handle = self.localizer.estimate(&spec.id).map_or(spec.pose, |e| e.handle_pose);
            prims.push(Primitive::new(spec.id.clone(), handle.compose(&spec.body.pose), spec.body.shape));
        }
        let mut cw = CollisionWorld::from_world_primitives(&prims, &base);
        if let Some(id) = &held {
            if let Ok(spec) = self.tool_spec(id) {
                let rel = spec.grasp_offset.inverse().compose(&spec.body.pose);
                cw.attached = Some(AttachedBody::enclosing(id.clone(), &rel, &spec.body.shape));
            }
        }
        if self.config.use_point_cloud {
            self.add_cloud(&mut cw);
        }
        cw
    }

    /// Current stereo cloud and the left camera's world pose.
    pub fn stereo_cloud(&self) -> Option<(PointCloud, Pose)> {
        let spec = self.sim.scene.camera(&self.config.stereo_camera)?;
        let (Camera::Pinhole(model), Some(baseline)) = (spec.camera, spec.baseline) else { return None };
        let rig = StereoRig::new(model, baseline);
        let world_pose = self.sim.camera_pose(&spec.name)?;
        let cloud = simulate_point_cloud(&self.sim.scene_primitives(), &rig, &world_pose, &self.config.cloud, self.sim.time());
        Some((cloud, world_pose))
    }

    fn add_cloud(&self, cw: &mut CollisionWorld) {
        let Some((cloud, world_pose)) = self.stereo_cloud() else { return };
        let in_base = self.sim.base_pose().inverse().compose(&world_pose);
        cw.add_point_cloud(&cloud, &in_base);
        let margin = cw.voxels.resolution * 3f64.sqrt() / 2.0 + 0.01;
        let known: Vec<Primitive> = cw.primitives().cloned().collect();
        for p in &known {
            cw.voxels.clear_in(p, margin);
        }
        if let Some(att) = cw.attached.clone() {
            let poses = self.sim.arm().forward_kinematics(&self.sim.feedback()).expect("feedback matches model");
            let ee = poses[self.sim.arm().dof()];
            let a = ee.transform_point(&att.a);
            let b = ee.transform_point(&att.b);
            let mid = (a + b) / 2.0;
            let axis = b - a;
            let half = axis.norm() / 2.0;
            let rot = nalgebra::UnitQuaternion::rotation_between(&nalgebra::Vector3::z(), &axis)
                .unwrap_or_else(nalgebra::UnitQuaternion::identity);
            let cap = Primitive::new(
                att.name.clone(),
                Pose::new(rot, mid),
                Shape::Capsule { half_length: half, radius: att.radius },
            );
            cw.voxels.clear_in(&cap, margin);
        }
    }

    fn next_params(&mut self) -> PlannerParams {
        self.plans += 1;
        PlannerParams { seed: self.config.planner.seed.wrapping_add(self.plans), ..self.config.planner }
    }

    fn plan_segment(
        &mut self,
        cw: &CollisionWorld,
        from: &JointVector,
        target: &Pose,
    ) -> Result<(JointVector, Trajectory), ExecutiveError> {
        let params = self.next_params();
        let arm = self.sim.arm().clone();
        let goal = ik_goal(cw, &arm, from, target, params.seed)?;
        let plan = plan_rrt_star(cw, &arm, from, &goal, &params)?;
        Ok((goal, plan.trajectory))
    }

    fn to_base(&self, world: &Pose) -> Pose {
        self.sim.base_pose().inverse().compose(world)
    }

    fn allow_gripper(cw: &mut CollisionWorld, tool: &str) {
        for l in GRIPPER_LINKS {
            cw.allow(l, tool);
        }
    }

    fn finish(stages: Vec<Stage>) -> GraspPlan {
        let trajs: Vec<&Trajectory> = stages
            .iter()
            .filter_map(|s| match s {
                Stage::Move { trajectory } => Some(trajectory),
                Stage::Gripper { .. } => None,
            })
            .collect();
        let display = Trajectory::concat(&trajs);
        GraspPlan { stages, display }
    }

    /// Free motion to the pregrasp point, descent onto the handle, close,
    /// and retreat to the pregrasp point with the tool attached.
    pub fn plan_grasp(&mut self) -> Result<GraspPlan, ExecutiveError> {
        let tool = self.task.selected_tool.clone().ok_or(ExecutiveError::NoTool)?;
        let spec = self.tool_spec(&tool)?;
        let est = self.localizer.estimate(&tool).ok_or_else(|| ExecutiveError::ToolNotLocalized(tool.clone()))?;
        let handle = self.to_base(&est.handle_pose);
        let pre = handle.compose(&Pose::from_translation(0.0, 0.0, self.config.pregrasp)).compose(&spec.grasp_offset);
        let grasp = handle.compose(&spec.grasp_offset);

        let free = self.collision_world();
        let start = self.sim.feedback();
        let (q_pre, approach) = self.plan_segment(&free, &start, &pre)?;

        let mut contact = free.clone();
        Self::allow_gripper(&mut contact, &tool);
        let (q_grasp, descend) = self.plan_segment(&contact, &q_pre, &grasp)?;

        let mut lifted = contact.clone();
        lifted.remove_primitive(&tool);
        let rel = spec.grasp_offset.inverse().compose(&spec.body.pose);
        lifted.attached = Some(AttachedBody::enclosing(tool.clone(), &rel, &spec.body.shape));
        lifted.allow(&tool, TOOL_TRAY);
        let params = self.next_params();
        let arm = self.sim.arm().clone();
        let lift = plan_rrt_star(&lifted, &arm, &q_grasp, &q_pre, &params)?.trajectory;

        Ok(Self::finish(vec![
            Stage::Move { trajectory: approach },
            Stage::Move { trajectory: descend },
            Stage::Gripper { close: true },
            Stage::Move { trajectory: lift },
        ]))
    }

    /// Carries the held tool so its tip reaches the sample marker.
    pub fn plan_sample(&mut self) -> Result<GraspPlan, ExecutiveError> {
        let tool = self.sim.held_tool().map(str::to_string).ok_or(ExecutiveError::NotHolding)?;
        let spec = self.tool_spec(&tool)?;
        let marker = self.task.marker.ok_or(ExecutiveError::NoMarker)?;
        let target = self.to_base(&marker.compose(&spec.tip_offset.inverse()).compose(&spec.grasp_offset));
        let cw = self.collision_world();
        let start = self.sim.feedback();
        let (_, traj) = self.plan_segment(&cw, &start, &target)?;
        Ok(Self::finish(vec![Stage::Move { trajectory: traj }]))
    }

    /// Returns the held tool to the slot it was taken from, releases it and
    /// retreats.
    pub fn plan_return(&mut self) -> Result<GraspPlan, ExecutiveError> {
        let tool = self.sim.held_tool().map(str::to_string).ok_or(ExecutiveError::NotHolding)?;
        let spec = self.tool_spec(&tool)?;
        let slot = self.to_base(&self.slot.unwrap_or(spec.pose));
        let pre = slot.compose(&Pose::from_translation(0.0, 0.0, self.config.pregrasp)).compose(&spec.grasp_offset);
        let place = slot.compose(&spec.grasp_offset);

        let carry = self.collision_world();
        let start = self.sim.feedback();
        let (q_pre, approach) = self.plan_segment(&carry, &start, &pre)?;

        let mut lowering = carry.clone();
        lowering.allow(&tool, TOOL_TRAY);
        let (q_place, descend) = self.plan_segment(&lowering, &q_pre, &place)?;

        let mut released = carry.clone();
        released.attached = None;
        released.add_primitive(Primitive::new(tool.clone(), slot.compose(&spec.body.pose), spec.body.shape));
        Self::allow_gripper(&mut released, &tool);
        let params = self.next_params();
        let arm = self.sim.arm().clone();
        let retreat = plan_rrt_star(&released, &arm, &q_place, &q_pre, &params)?.trajectory;

        Ok(Self::finish(vec![
            Stage::Move { trajectory: approach },
            Stage::Move { trajectory: descend },
            Stage::Gripper { close: false },
            Stage::Move { trajectory: retreat },
        ]))
    }

    /// Direct operator motion: plans to the named joint configuration and
    /// executes it immediately. Only legal outside planning and execution.
    pub fn goto_named_pose(&mut self, name: &str) -> Result<ExecutionReport, ExecutiveError> {
        let goal = self
            .sim
            .scene
            .named_poses
            .get(name)
            .cloned()
            .ok_or_else(|| ExecutiveError::UnknownNamedPose(name.to_string()))?;
        let cw = self.collision_world();
        let start = self.sim.feedback();
        let params = self.next_params();
        let arm = self.sim.arm().clone();
        let plan = plan_rrt_star(&cw, &arm, &start, &JointVector(goal), &params)?;
        let (monitor, stop) = (self.config.monitor, Arc::clone(&self.stop));
        let report = execute(&plan.trajectory, &mut self.driver(CommandSource::NamedPose), &monitor, &stop);
        self.stop.store(false, Ordering::SeqCst);
        self.reports.push(report.clone());
        Ok(report)
    }
}

/// Pose `height` above the top face of a terrain box, axes aligned with it.
pub fn marker_above(sim: &Simulator, site: &str, height: f64) -> Option<Pose> {
    let prim = sim.world().terrain.iter().find(|p| p.name == site)?;
    let top = match prim.shape {
        Shape::Box { half_extents } => half_extents[2],
        Shape::Sphere { radius } => radius,
        Shape::Capsule { half_length, radius } => half_length + radius,
        Shape::Plane => 0.0,
    };
    Some(prim.pose.compose(&Pose::from_translation(0.0, 0.0, top + height)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleOutcome {
    pub done: bool,
    pub final_phase: Phase,
    pub confirms: usize,
    pub retries: usize,
    pub sample_error: Option<f64>,
    pub last_error: Option<String>,
}

impl Executive {
    /// Scripted operator for one pick-and-place cycle: optional move to a
    /// survey pose, observe, select `tool` (unless a cycle is already under
    /// way, which is resumed), then plan and confirm each step,
    /// answering failures with `RequestPlan` / `Retry` up to `max_retries`
    /// times.
    pub fn run_pick_and_place(&mut self, tool: &str, marker: Pose, survey: Option<&str>, max_retries: usize) -> CycleOutcome {
        if let Some(name) = survey {
            self.handle(TaskEvent::GotoNamedPose { name: name.to_string() });
        }
        self.observe();
        if matches!(self.phase(), Phase::Idle | Phase::ToolSelected | Phase::Done) {
            self.handle(TaskEvent::SelectTool { tool: tool.to_string() });
        }
        let mut retries = 0;
        let mut confirms = 0;
        for _ in 0..64 {
            let ev = match self.phase() {
                Phase::Done => break,
                Phase::ToolSelected | Phase::SampleDone => TaskEvent::RequestPlan,
                Phase::Grasped if self.task.marker != Some(marker) => TaskEvent::SetMarker { pose: marker },
                Phase::Grasped => TaskEvent::RequestPlan,
                p if p.is_await() => {
                    confirms += 1;
                    TaskEvent::Confirm
                }
                p if p.is_plan() || p == Phase::Aborted => {
                    if retries == max_retries {
                        break;
                    }
                    retries += 1;
                    self.observe();
                    if p == Phase::Aborted {
                        TaskEvent::Retry
                    } else {
                        TaskEvent::RequestPlan
                    }
                }
                _ => break,
            };
            self.handle(ev);
        }
        CycleOutcome {
            done: self.phase() == Phase::Done,
            final_phase: self.phase(),
            confirms,
            retries,
            sample_error: self.sample_errors.last().copied(),
            last_error: self.task.last_error.clone(),
        }
    }
}
