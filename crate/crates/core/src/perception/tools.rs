use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PerceptionError, TagGraph};
use crate::geometry::{Pose, TransformTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolEstimate {
    pub tool_id: String,
    /// Handle pose in the world frame.
    pub handle_pose: Pose,
    /// Tag to handle, constant per tool.
    pub mount_offset: Pose,
    pub tracked: bool,
    pub last_update: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ToolBinding {
    tag_id: u32,
    mount_offset: Pose,
}

/// Projects tag estimates from the wrist camera into the world through the
/// arm kinematics and keeps the last estimate of every tool.
///
/// A tag counts as present when the graph saw it within `freshness` seconds
/// of the query time. Otherwise the previous world pose is returned frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolLocalizer {
    pub freshness: f64,
    pub base_frame: String,
    tools: BTreeMap<String, ToolBinding>,
    estimates: BTreeMap<String, ToolEstimate>,
}

impl ToolLocalizer {
    pub fn new() -> Self {
        Self {
            freshness: 0.5,
            base_frame: "arm_base".into(),
            tools: BTreeMap::new(),
            estimates: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, tool_id: impl Into<String>, tag_id: u32, mount_offset: Pose) {
        self.tools.insert(tool_id.into(), ToolBinding { tag_id, mount_offset });
    }

    pub fn estimate(&self, tool_id: &str) -> Option<&ToolEstimate> {
        self.estimates.get(tool_id)
    }

    pub fn estimates(&self) -> impl Iterator<Item = &ToolEstimate> {
        self.estimates.values()
    }

    /// `arm_fk` are the link poses from forward kinematics (the wrist is the
    /// last joint frame), `hand_eye` the camera in the wrist frame and `tree`
    /// must resolve the arm base in `world`.
    pub fn localize(
        &mut self,
        graph: &TagGraph,
        tool_id: &str,
        arm_fk: &[Pose],
        hand_eye: &Pose,
        tree: &TransformTree,
        now: f64,
    ) -> Result<ToolEstimate, PerceptionError> {
        let frozen = |est: Option<&ToolEstimate>| match est {
            Some(e) => Ok(ToolEstimate { tracked: false, ..e.clone() }),
            None => Err(PerceptionError::NeverSeen(tool_id.to_string())),
        };
        let Some(binding) = self.tools.get(tool_id) else {
            return frozen(self.estimates.get(tool_id));
        };
        let tag = graph.get(binding.tag_id).filter(|t| now - t.last_seen <= self.freshness);
        let Some(tag) = tag else {
            let out = frozen(self.estimates.get(tool_id))?;
            self.estimates.insert(tool_id.to_string(), out.clone());
            return Ok(out);
        };
        if arm_fk.len() < 2 {
            return Err(PerceptionError::Frames("forward kinematics needs at least one link".into()));
        }
        let base = tree
            .lookup("world", &self.base_frame)
            .map_err(|e| PerceptionError::Frames(e.to_string()))?;
        let wrist = arm_fk[arm_fk.len() - 2];
        let handle_pose = base
            .compose(&wrist)
            .compose(hand_eye)
            .compose(&tag.pose)
            .compose(&binding.mount_offset);
        let est = ToolEstimate {
            tool_id: tool_id.to_string(),
            handle_pose,
            mount_offset: binding.mount_offset,
            tracked: true,
            last_update: tag.last_seen,
        };
        self.estimates.insert(tool_id.to_string(), est.clone());
        Ok(est)
    }
}

impl Default for ToolLocalizer {
    fn default() -> Self {
        Self::new()
    }
}
