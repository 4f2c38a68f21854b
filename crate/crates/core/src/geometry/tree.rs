use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Pose;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("frames `{from}` and `{to}` are not connected")]
    DisconnectedFrames { from: String, to: String },
    #[error("edge `{parent}` -> `{child}` would create a cycle")]
    Cycle { parent: String, child: String },
    #[error("frame `{child}` already has parent `{existing}`, cannot attach to `{requested}`")]
    Reparent {
        child: String,
        existing: String,
        requested: String,
    },
}

/// Transform from a parent frame to one of its children.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// Pose of the child expressed in the parent frame.
    pub pose: Pose,
    pub stamp: f64,
    pub is_static: bool,
}

/// Forest of named frames. Every frame has at most one parent so the path
/// between two connected frames is unique.
///
/// Dynamic edges are overwritten by newer stamps only; static edges are
/// overwritten unconditionally and their stamps are meaningless.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformTree {
    parents: BTreeMap<String, (String, Edge)>,
    frames: BTreeSet<String>,
}

impl TransformTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, frame: &str) -> bool {
        self.frames.contains(frame)
    }

    pub fn frames(&self) -> impl Iterator<Item = &str> {
        self.frames.iter().map(String::as_str)
    }

    pub fn parent_of(&self, frame: &str) -> Option<(&str, &Edge)> {
        self.parents.get(frame).map(|(p, e)| (p.as_str(), e))
    }

    pub fn set_static(&mut self, parent: &str, child: &str, pose: Pose) -> Result<(), GeometryError> {
        self.insert(parent, child, Edge { pose, stamp: 0.0, is_static: true })
    }

    /// Updates a dynamic edge. Returns `Ok(false)` when the stored edge is
    /// newer than `stamp` and the update was dropped.
    pub fn set_dynamic(
        &mut self,
        parent: &str,
        child: &str,
        pose: Pose,
        stamp: f64,
    ) -> Result<bool, GeometryError> {
        if let Some((p, e)) = self.parents.get(child) {
            if p == parent && !e.is_static && e.stamp > stamp {
                return Ok(false);
            }
        }
        self.insert(parent, child, Edge { pose, stamp, is_static: false })?;
        Ok(true)
    }

    fn insert(&mut self, parent: &str, child: &str, edge: Edge) -> Result<(), GeometryError> {
        if parent == child {
            return Err(GeometryError::Cycle {
                parent: parent.into(),
                child: child.into(),
            });
        }
        if let Some((existing, _)) = self.parents.get(child) {
            if existing != parent {
                return Err(GeometryError::Reparent {
                    child: child.into(),
                    existing: existing.clone(),
                    requested: parent.into(),
                });
            }
        } else if self.ancestors(parent).iter().any(|f| f == child) {
            return Err(GeometryError::Cycle {
                parent: parent.into(),
                child: child.into(),
            });
        }
        self.frames.insert(parent.to_string());
        self.frames.insert(child.to_string());
        self.parents.insert(child.to_string(), (parent.to_string(), edge));
        Ok(())
    }

    /// `frame` followed by its ancestors up to the root.
    fn ancestors(&self, frame: &str) -> Vec<String> {
        let mut chain = vec![frame.to_string()];
        let mut cur = frame;
        while let Some((p, _)) = self.parents.get(cur) {
            chain.push(p.clone());
            cur = p;
        }
        chain
    }

    /// Pose of `frame` in the frame `chain.last()` by composing down from
    /// the top of `chain` (which must be an ancestor list of `frame`).
    fn pose_in_ancestor(&self, chain: &[String]) -> Pose {
        let mut pose = Pose::identity();
        for frame in chain.iter().rev().skip(1) {
            let (_, edge) = &self.parents[frame];
            pose = pose.compose(&edge.pose);
        }
        pose
    }

    /// Pose of `to` expressed in `from`; an edge `from -> to` with pose `p`
    /// looks up as `p`.
    pub fn lookup(&self, from: &str, to: &str) -> Result<Pose, GeometryError> {
        for f in [from, to] {
            if !self.frames.contains(f) {
                return Err(GeometryError::UnknownFrame(f.to_string()));
            }
        }
        if from == to {
            return Ok(Pose::identity());
        }
        let up_from = self.ancestors(from);
        let up_to = self.ancestors(to);
        let lca = up_from
            .iter()
            .position(|f| up_to.contains(f))
            .ok_or_else(|| GeometryError::DisconnectedFrames {
                from: from.into(),
                to: to.into(),
            })?;
        let lca_name = &up_from[lca];
        let lca_in_to = up_to.iter().position(|f| f == lca_name).expect("common ancestor");
        let lca_from = self.pose_in_ancestor(&up_from[..=lca]);
        let lca_to = self.pose_in_ancestor(&up_to[..=lca_in_to]);
        Ok(lca_from.inverse().compose(&lca_to))
    }
}
