use std::path::Path;

use serde::{Deserialize, Serialize};

use super::collision::CollisionWorld;
use crate::geometry::Primitive;
use crate::kinematics::{ArmModel, JointVector};

/// Self-contained planning query: an arm, obstacles in its base frame and
/// start/goal configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningProblem {
    pub name: String,
    pub arm: ArmModel,
    pub obstacles: Vec<Primitive>,
    pub start: JointVector,
    pub goal: JointVector,
}

impl PlanningProblem {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn world(&self) -> CollisionWorld {
        let mut cw = CollisionWorld::new();
        for p in &self.obstacles {
            cw.add_primitive(p.clone());
        }
        cw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planning::rrt::{plan_rrt_star, PlannerParams};
    use crate::simulation::tests::fixture;

    #[test]
    fn wall_gap_fixture_is_well_posed() {
        let p = PlanningProblem::load(fixture("wall_gap.json")).unwrap();
        let cw = p.world();
        assert!(cw.is_free(&p.arm, &p.start));
        assert!(cw.is_free(&p.arm, &p.goal));
        assert!(!cw.segment_free(&p.arm, &p.start, &p.goal, 0.5f64.to_radians()));
        // Folding the forearm and swinging the shoulder without threading
        // the gap is blocked too.
        assert!(!cw.is_free(&p.arm, &[1.2, 0.0]));
    }

    #[test]
    fn wall_gap_solved_for_every_seed() {
        let p = PlanningProblem::load(fixture("wall_gap.json")).unwrap();
        let cw = p.world();
        for seed in 0..100 {
            let params = PlannerParams { seed, max_time: 1.9, max_iterations: usize::MAX, refine_iterations: Some(500), ..PlannerParams::default() };
            let plan = plan_rrt_star(&cw, &p.arm, &p.start, &p.goal, &params).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            assert!(plan.stats.elapsed < 2.0);
            let mut t = plan.trajectory.clone();
            assert!(t.validate(&cw, &p.arm, params.validate_step));
            assert!(t.is_valid());
            assert_eq!(t.goal(), &p.goal);
        }
    }
}
