//! Deterministic seeded world simulation.
//!
//! The [`Simulator`] owns the world state and is its only writer. Physics
//! noise (joint feedback) and observation noise (tag corners) are drawn from
//! two independent ChaCha streams derived from the seed, so adding or
//! removing observations never perturbs the state trajectory.

mod actuator;
mod observe;
mod scene;

pub use actuator::{ActuatorParams, ActuatorState};
pub use observe::ObservationSet;
pub use scene::{
    ArmSection, CameraSpec, DoorSection, DoorSpec, Scene, SceneError, TagSpec, ToolBody, ToolSpec, SCENE_VERSION,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Primitive, TransformTree};
use crate::kinematics::{ArmModel, JointCalibration, JointVector};
use crate::perception::DoorKinematics;

pub const DEFAULT_DT: f64 = 0.02;
pub const DEFAULT_OBS_HZ: f64 = 3.0;
/// Gripper-to-grasp-pose tolerance for a successful close.
pub const GRASP_TOL_POS: f64 = 0.02;
pub const GRASP_TOL_ROT: f64 = 0.1745;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolState {
    pub id: String,
    /// Handle pose in the world.
    pub pose: Pose,
    pub tag_id: u32,
    pub mount_offset: Pose,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GripperState {
    pub closed: bool,
    /// Held tool and its handle pose in the end-effector frame.
    pub held: Option<(String, Pose)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    pub vehicle_pose: Pose,
    /// (starboard, port) door angles, radians.
    pub door_angles: (f64, f64),
    pub arm: Vec<ActuatorState>,
    pub gripper: GripperState,
    pub tools: Vec<ToolState>,
    pub terrain: Vec<Primitive>,
    pub sample_marker: Option<Pose>,
    pub rng_seed: u64,
    physics_rng: ChaCha8Rng,
    obs_rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    Setpoints { q: Vec<f64> },
    /// Close the valves: every joint holds its current position.
    Hold,
    Gripper { close: bool },
    DoorAngles { starboard: f64, port: f64 },
    Marker { pose: Option<Pose> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandSource {
    /// Streaming a confirmed trajectory.
    Execution,
    /// Direct operator motion to a named pose.
    NamedPose,
    /// Direct operator gripper command.
    Gripper,
    /// Stop / hold requests.
    Stop,
    /// Scene edits (doors, marker) and replayed logs.
    Operator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedCommand {
    pub time: f64,
    pub source: CommandSource,
    pub command: Command,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub scene: Scene,
    world: WorldState,
    calibration: Vec<JointCalibration>,
    log: Vec<LoggedCommand>,
    pub dt: f64,
}

impl Simulator {
    pub fn new(scene: Scene) -> Self {
        let seed = scene.seed;
        Self::with_seed(scene, seed)
    }

    pub fn with_seed(scene: Scene, seed: u64) -> Self {
        let mut physics_rng = ChaCha8Rng::seed_from_u64(seed);
        physics_rng.set_stream(1);
        let mut obs_rng = ChaCha8Rng::seed_from_u64(seed);
        obs_rng.set_stream(2);
        let arm = scene
            .arm
            .initial
            .iter()
            .zip(&scene.actuators)
            .map(|(q, p)| ActuatorState::at_rest(*q, *p))
            .collect();
        let tools = scene
            .tools
            .iter()
            .map(|t| ToolState {
                id: t.id.clone(),
                pose: t.pose,
                tag_id: t.tag_id,
                mount_offset: t.mount_offset,
            })
            .collect();
        let calibration = scene
            .arm
            .model
            .joint_limits
            .iter()
            .map(|l| JointCalibration::full_turn(scene.arm.encoder_bits, l.min, l.max))
            .collect();
        let world = WorldState {
            time: 0.0,
            vehicle_pose: scene.doors.vehicle_pose,
            door_angles: (scene.doors.starboard.angle, scene.doors.port.angle),
            arm,
            gripper: GripperState::default(),
            tools,
            terrain: scene.terrain.clone(),
            sample_marker: None,
            rng_seed: seed,
            physics_rng,
            obs_rng,
        };
        let mut sim = Self { scene, world, calibration, log: Vec::new(), dt: DEFAULT_DT };
        sim.sample_feedback();
        sim
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn time(&self) -> f64 {
        self.world.time
    }

    pub fn arm(&self) -> &ArmModel {
        &self.scene.arm.model
    }

    pub fn command_log(&self) -> &[LoggedCommand] {
        &self.log
    }

    pub fn door_kinematics(&self) -> DoorKinematics {
        let d = &self.scene.doors;
        DoorKinematics {
            t_os: d.starboard.joint_origin.into(),
            t_op: d.port.joint_origin.into(),
            theta_s0: d.starboard.theta0,
            theta_p0: d.port.theta0,
        }
    }

    /// Joint feedback as reported by the encoders (noisy, quantized).
    pub fn feedback(&self) -> JointVector {
        JointVector(self.world.arm.iter().map(|a| a.feedback).collect())
    }

    /// True link-side joint angles.
    pub fn true_joints(&self) -> JointVector {
        JointVector(self.world.arm.iter().map(|a| a.position).collect())
    }

    pub fn setpoints(&self) -> JointVector {
        JointVector(self.world.arm.iter().map(|a| a.setpoint).collect())
    }

    pub fn apply(&mut self, source: CommandSource, command: Command) {
        match &command {
            Command::Setpoints { q } => {
                for (a, s) in self.world.arm.iter_mut().zip(q) {
                    a.setpoint = *s;
                }
            }
            Command::Hold => {
                for a in &mut self.world.arm {
                    // valves closed: the drive stops where it is
                    a.setpoint = a.drive - a.params.bias;
                }
            }
            Command::Gripper { close } => self.actuate_gripper(*close),
            Command::DoorAngles { starboard, port } => self.world.door_angles = (*starboard, *port),
            Command::Marker { pose } => self.world.sample_marker = *pose,
        }
        self.log.push(LoggedCommand { time: self.world.time, source, command });
    }

    fn actuate_gripper(&mut self, close: bool) {
        self.world.gripper.closed = close;
        if !close {
            self.world.gripper.held = None;
            return;
        }
        if self.world.gripper.held.is_some() {
            return;
        }
        let ee = self.true_ee_world();
        for (tool, spec) in self.world.tools.iter().zip(&self.scene.tools) {
            let grasp = tool.pose.compose(&spec.grasp_offset);
            if grasp.distance_to(&ee) <= GRASP_TOL_POS && grasp.angle_to(&ee) <= GRASP_TOL_ROT {
                self.world.gripper.held = Some((tool.id.clone(), ee.inverse().compose(&tool.pose)));
                break;
            }
        }
    }

    pub fn held_tool(&self) -> Option<&str> {
        self.world.gripper.held.as_ref().map(|(id, _)| id.as_str())
    }

    fn sample_feedback(&mut self) {
        for (a, cal) in self.world.arm.iter_mut().zip(&self.calibration) {
            let sd = a.params.feedback_noise_std;
            let noisy = if sd > 0.0 {
                a.position + Normal::new(0.0, sd).expect("finite std").sample(&mut self.world.physics_rng)
            } else {
                a.position
            };
            a.feedback = cal.quantize(noisy).unwrap_or(noisy);
        }
    }

    pub fn step(&mut self) {
        let dt = self.dt;
        for a in &mut self.world.arm {
            a.advance(dt);
        }
        if let Some((id, rel)) = self.world.gripper.held.clone() {
            let pose = self.true_ee_world().compose(&rel);
            if let Some(t) = self.world.tools.iter_mut().find(|t| t.id == id) {
                t.pose = pose;
            }
        }
        self.world.time += dt;
        self.sample_feedback();
    }

    pub fn run_for(&mut self, secs: f64) {
        let n = (secs / self.dt).round() as usize;
        for _ in 0..n {
            self.step();
        }
    }

    /// Arm base pose in the world.
    pub fn base_pose(&self) -> Pose {
        self.frames().lookup("world", "arm_base").expect("arm base is attached")
    }

    /// Fixed vehicle frames only (no arm links).
    fn vehicle_frames(&self) -> TransformTree {
        let d = &self.scene.doors;
        let (ts, tp) = self.world.door_angles;
        let mut t = TransformTree::new();
        let mut add = |p: &str, c: &str, pose: Pose| t.set_static(p, c, pose).expect("scene frames form a tree");
        add("world", "vehicle", self.world.vehicle_pose);
        add("vehicle", "vehicle_tag", d.vehicle_tag.pose);
        add("vehicle_tag", &tag_frame(d.vehicle_tag.id), Pose::identity());
        let door = |spec: &DoorSpec, angle: f64| {
            Pose::new(Pose::rot_z(angle).rotation, spec.joint_origin.into())
        };
        add("vehicle_tag", "starboard_door", door(&d.starboard, ts));
        add("vehicle_tag", "port_door", door(&d.port, tp));
        for tag in &d.tags {
            add(&tag.parent, &tag_frame(tag.id), tag.pose);
        }
        add(&self.scene.arm.parent, "arm_base", self.scene.arm.mount);
        t
    }

    /// Ground-truth frame tree: vehicle, doors, tags, arm base, wrist,
    /// end-effector, cameras and tools.
    pub fn frames(&self) -> TransformTree {
        let mut t = self.vehicle_frames();
        let poses = self
            .arm()
            .forward_kinematics(&self.true_joints())
            .expect("arm state matches model");
        let n = self.arm().dof();
        t.set_static("arm_base", "wrist", poses[n - 1]).expect("tree");
        t.set_static("arm_base", "ee", poses[n]).expect("tree");
        for c in &self.scene.cameras {
            t.set_static(&c.parent, &c.name, c.mount).expect("tree");
        }
        for (tool, spec) in self.world.tools.iter().zip(&self.scene.tools) {
            let frame = tool_frame(&tool.id);
            t.set_static("world", &frame, tool.pose).expect("tree");
            t.set_static(&frame, &tag_frame(spec.tag_id), spec.mount_offset.inverse()).expect("tree");
        }
        t
    }

    pub fn true_ee_world(&self) -> Pose {
        let ee = self.arm().end_effector(&self.true_joints()).expect("arm state matches model");
        self.base_pose().compose(&ee)
    }

    pub fn camera_pose(&self, name: &str) -> Option<Pose> {
        self.frames().lookup("world", name).ok()
    }

    /// Terrain plus free tool bodies, in the world frame.
    pub fn scene_primitives(&self) -> Vec<Primitive> {
        let mut out = self.world.terrain.clone();
        for (tool, spec) in self.world.tools.iter().zip(&self.scene.tools) {
            out.push(Primitive::new(tool.id.clone(), tool.pose.compose(&spec.body.pose), spec.body.shape));
        }
        out
    }

    /// All tags with their sizes, world poses and owning tool (if any).
    pub fn tag_poses(&self) -> Vec<(u32, f64, Pose, Option<String>)> {
        let frames = self.frames();
        let d = &self.scene.doors;
        let mut out = Vec::new();
        for t in std::iter::once(&d.vehicle_tag).chain(&d.tags) {
            out.push((t.id, t.size, frames.lookup("world", &tag_frame(t.id)).expect("tag frame"), None));
        }
        for (tool, spec) in self.world.tools.iter().zip(&self.scene.tools) {
            out.push((
                spec.tag_id,
                spec.tag_size,
                tool.pose.compose(&spec.mount_offset.inverse()),
                Some(tool.id.clone()),
            ));
        }
        out.sort_by_key(|t| t.0);
        out
    }

    pub fn tag_size(&self, id: u32) -> Option<f64> {
        let d = &self.scene.doors;
        std::iter::once(&d.vehicle_tag)
            .chain(&d.tags)
            .find(|t| t.id == id)
            .map(|t| t.size)
            .or_else(|| self.scene.tools.iter().find(|t| t.tag_id == id).map(|t| t.tag_size))
    }

    #[cfg(test)]
    pub(crate) fn world_mut(&mut self) -> &mut WorldState {
        &mut self.world
    }
}

pub fn tag_frame(id: u32) -> String {
    format!("tag_{id}")
}

pub fn tool_frame(id: &str) -> String {
    format!("tool_{id}")
}
