//! Scene files: UTF-8 JSON describing the arm, cameras, vehicle doors and
//! tags, tools, terrain, named poses, actuators and the RNG seed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::actuator::ActuatorParams;
use crate::cameras::Camera;
use crate::geometry::{Pose, Primitive, Shape};
use crate::kinematics::ArmModel;

pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scene file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene parse error at line {line}, column {column}{}: {message}", field.as_ref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
    ParseError {
        line: usize,
        column: usize,
        field: Option<String>,
        message: String,
    },
    #[error("scene schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u64, expected: u32 },
    #[error("invalid scene: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSection {
    #[serde(flatten)]
    pub model: ArmModel,
    /// Frame the arm base is mounted on.
    pub parent: String,
    /// Arm base pose in `parent`.
    pub mount: Pose,
    pub initial: Vec<f64>,
    #[serde(default = "default_bits")]
    pub encoder_bits: u32,
}

fn default_bits() -> u32 {
    11
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub name: String,
    /// Mount frame; `wrist` mounts follow the last arm link.
    pub parent: String,
    pub mount: Pose,
    pub camera: Camera,
    /// Rectified stereo baseline, meters, for two-view rigs.
    #[serde(default)]
    pub baseline: Option<f64>,
    #[serde(default = "default_min_pixels")]
    pub min_pixels: f64,
    #[serde(default)]
    pub noise_px: f64,
}

fn default_min_pixels() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagSpec {
    pub id: u32,
    pub size: f64,
    pub parent: String,
    pub pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoorSpec {
    /// Hinge origin in the vehicle-tag frame.
    pub joint_origin: [f64; 3],
    pub angle: f64,
    /// Measured angle offset of the door's reference point.
    pub theta0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoorSection {
    #[serde(default)]
    pub vehicle_pose: Pose,
    /// Reference tag on the bow, z axis parallel to vehicle z.
    pub vehicle_tag: TagSpec,
    pub starboard: DoorSpec,
    pub port: DoorSpec,
    /// Further fixed tags (door tags, calibration tags).
    #[serde(default)]
    pub tags: Vec<TagSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSpec {
    pub id: String,
    pub tag_id: u32,
    pub tag_size: f64,
    /// Handle pose in the world; handle +z points up out of the tool.
    pub pose: Pose,
    /// Tag frame to handle frame.
    pub mount_offset: Pose,
    /// Handle frame to end-effector pose at grasp.
    pub grasp_offset: Pose,
    /// Handle frame to working tip.
    pub tip_offset: Pose,
    /// Collision body in the handle frame.
    pub body: ToolBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolBody {
    pub pose: Pose,
    #[serde(flatten)]
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub version: u32,
    pub arm: ArmSection,
    pub cameras: Vec<CameraSpec>,
    pub doors: DoorSection,
    pub tools: Vec<ToolSpec>,
    pub terrain: Vec<Primitive>,
    pub named_poses: BTreeMap<String, Vec<f64>>,
    pub actuators: Vec<ActuatorParams>,
    pub seed: u64,
}

fn field_from_message(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let end = start + msg[start..].find('`')?;
    Some(msg[start..end].to_string())
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let to_parse = |e: serde_json::Error| SceneError::ParseError {
            line: e.line(),
            column: e.column(),
            field: field_from_message(&e.to_string()),
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(to_parse)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCENE_VERSION as u64 => {}
            Some(v) => return Err(SceneError::SchemaVersionMismatch { found: v, expected: SCENE_VERSION }),
            None => {
                return Err(SceneError::ParseError {
                    line: 1,
                    column: 1,
                    field: Some("version".into()),
                    message: "missing or non-integer field `version`".into(),
                })
            }
        }
        // Parse from text (not the Value) so errors carry line numbers.
        let scene: Scene = serde_json::from_str(text).map_err(to_parse)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Invalid(m));
        self.arm.model.validate().map_err(|e| SceneError::Invalid(e.to_string()))?;
        let n = self.arm.model.dof();
        if self.arm.initial.len() != n {
            return bad(format!("arm.initial has {} values for {n} joints", self.arm.initial.len()));
        }
        if self.actuators.len() != n {
            return bad(format!("actuators has {} entries for {n} joints", self.actuators.len()));
        }
        for (i, a) in self.actuators.iter().enumerate() {
            a.validate().map_err(|e| SceneError::Invalid(format!("actuators[{i}]: {e}")))?;
        }
        for (name, q) in &self.named_poses {
            if q.len() != n {
                return bad(format!("named_poses.{name} has {} values for {n} joints", q.len()));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &self.cameras {
            c.camera.validate().map_err(|e| SceneError::Invalid(format!("camera {}: {e}", c.name)))?;
            if !names.insert(c.name.as_str()) {
                return bad(format!("duplicate camera name {}", c.name));
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for t in std::iter::once(&self.doors.vehicle_tag).chain(&self.doors.tags) {
            if !(t.size > 0.0) || !ids.insert(t.id) {
                return bad(format!("tag {} has a duplicate id or non-positive size", t.id));
            }
        }
        for t in &self.tools {
            if !(t.tag_size > 0.0) || !ids.insert(t.tag_id) {
                return bad(format!("tool {} tag {} has a duplicate id or non-positive size", t.id, t.tag_id));
            }
            t.body.shape.validate().map_err(|e| SceneError::Invalid(format!("tool {}: {e}", t.id)))?;
        }
        for p in &self.terrain {
            p.shape.validate().map_err(|e| SceneError::Invalid(format!("terrain {}: {e}", p.name)))?;
        }
        Ok(())
    }

    pub fn camera(&self, name: &str) -> Option<&CameraSpec> {
        self.cameras.iter().find(|c| c.name == name)
    }

    pub fn tool(&self, id: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.id == id)
    }
}
