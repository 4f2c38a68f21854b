//! Joint-space RRT* with a Euclidean joint metric.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::collision::CollisionWorld;
use super::PlanningError;
use crate::geometry::Pose;
use crate::kinematics::{solve_ik, ArmModel, IkParams, JointVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    /// Wall-clock budget (s).
    pub max_time: f64,
    /// Iteration budget; the planner stops at whichever runs out first.
    pub max_iterations: usize,
    /// Steering step (rad).
    pub step: f64,
    pub goal_bias: f64,
    /// Upper bound on the shrinking rewiring radius (rad).
    pub rewire_radius: f64,
    pub seed: u64,
    /// Edge validation resolution, max per-joint change (rad).
    pub validate_step: f64,
    /// Return the straight segment when it is already free.
    pub try_direct: bool,
    /// Stop this many iterations after the first solution instead of
    /// spending the whole budget.
    #[serde(default)]
    pub refine_iterations: Option<usize>,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            max_time: 2.0,
            max_iterations: 3000,
            step: 0.35,
            goal_bias: 0.1,
            rewire_radius: 1.0,
            seed: 0,
            validate_step: 0.5f64.to_radians(),
            try_direct: true,
            refine_iterations: None,
        }
    }
}

/// Joint speed used to time trajectories (rad/s).
pub const JOINT_SPEED: f64 = 10.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub q: JointVector,
    pub t: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
    /// Joint-space length of the planned path.
    pub cost: f64,
    /// Largest per-joint change between consecutive waypoints (rad).
    pub max_step: f64,
}

impl Trajectory {
    /// Densifies `path` so no joint moves more than `max_step` between
    /// waypoints and times it at [`JOINT_SPEED`] on the fastest joint.
    pub fn from_path(path: &[JointVector], max_step: f64) -> Self {
        let mut waypoints = vec![Waypoint { q: path[0].clone(), t: 0.0, valid: true }];
        let mut cost = 0.0;
        let mut t = 0.0;
        for pair in path.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            cost += a.distance(b);
            let span = a.max_abs_diff(b);
            if span == 0.0 {
                continue;
            }
            let k = (span / max_step).ceil() as usize;
            for i in 1..=k {
                t += span / k as f64 / JOINT_SPEED;
                let q = if i == k { b.clone() } else { a.lerp(b, i as f64 / k as f64) };
                waypoints.push(Waypoint { q, t, valid: true });
            }
        }
        Self { waypoints, cost, max_step }
    }

    /// Joins trajectories end to end, shifting times so they stay strictly
    /// increasing. Duplicate joint waypoints are dropped.
    pub fn concat(parts: &[&Trajectory]) -> Self {
        let mut out = parts[0].clone();
        for p in &parts[1..] {
            let offset = out.duration();
            for (k, w) in p.waypoints.iter().enumerate() {
                if k == 0 && w.q.max_abs_diff(out.goal()) == 0.0 {
                    continue;
                }
                let t = if k == 0 { offset + w.q.max_abs_diff(out.goal()) / JOINT_SPEED } else { offset + w.t };
                out.waypoints.push(Waypoint { t, ..w.clone() });
            }
            out.cost += p.cost;
            out.max_step = out.max_step.max(p.max_step);
        }
        out
    }

    pub fn start(&self) -> &JointVector {
        &self.waypoints[0].q
    }

    pub fn goal(&self) -> &JointVector {
        &self.waypoints[self.waypoints.len() - 1].q
    }

    pub fn duration(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.t)
    }

    /// Re-checks every waypoint and the segments between them at
    /// `validate_step`, updating the flags. Returns true when all pass.
    pub fn validate(&mut self, cw: &CollisionWorld, arm: &ArmModel, validate_step: f64) -> bool {
        let mut ok = true;
        for i in 0..self.waypoints.len() {
            let free = cw.is_free(arm, &self.waypoints[i].q)
                && (i == 0 || cw.segment_free(arm, &self.waypoints[i - 1].q, &self.waypoints[i].q, validate_step));
            self.waypoints[i].valid = free;
            ok &= free;
        }
        ok
    }

    pub fn is_valid(&self) -> bool {
        self.waypoints.iter().all(|w| w.valid)
            && self.waypoints.windows(2).all(|w| w[1].t > w[0].t && w[0].q.max_abs_diff(&w[1].q) <= self.max_step + 1e-12)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub iterations: usize,
    pub nodes: usize,
    pub elapsed: f64,
    /// `(iteration, best cost)` every time the best solution improved.
    pub cost_history: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub trajectory: Trajectory,
    pub stats: PlanStats,
}

struct Node {
    q: Vec<f64>,
    parent: Option<usize>,
    cost: f64,
    children: Vec<usize>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn unit_ball_volume(d: usize) -> f64 {
    // V_d = π^(d/2) / Γ(d/2 + 1)
    let mut v = 1.0;
    let mut k = d;
    let pi = std::f64::consts::PI;
    while k >= 2 {
        v *= 2.0 * pi / k as f64;
        k -= 2;
    }
    if k == 1 {
        v *= 2.0;
    }
    v
}

struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn nearest(&self, q: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = dist(&n.q, q);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    fn near(&self, q: &[f64], r: f64) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                let d = dist(&n.q, q);
                (d <= r).then_some((i, d))
            })
            .collect()
    }

    fn reparent(&mut self, child: usize, parent: usize, cost: f64) {
        if let Some(old) = self.nodes[child].parent {
            self.nodes[old].children.retain(|c| *c != child);
        }
        self.nodes[child].parent = Some(parent);
        self.nodes[parent].children.push(child);
        let delta = self.nodes[child].cost - cost;
        let mut stack = vec![child];
        while let Some(i) = stack.pop() {
            self.nodes[i].cost -= delta;
            stack.extend(self.nodes[i].children.iter().copied());
        }
    }

    fn path_to(&self, mut i: usize) -> Vec<JointVector> {
        let mut out = vec![JointVector(self.nodes[i].q.clone())];
        while let Some(p) = self.nodes[i].parent {
            out.push(JointVector(self.nodes[p].q.clone()));
            i = p;
        }
        out.reverse();
        out
    }
}

/// Plans from `start` to `goal`. Every edge of the returned path is
/// collision-free at `params.validate_step`, and the trajectory is densified
/// to that resolution.
pub fn plan_rrt_star(
    cw: &CollisionWorld,
    arm: &ArmModel,
    start: &JointVector,
    goal: &JointVector,
    params: &PlannerParams,
) -> Result<Plan, PlanningError> {
    let began = Instant::now();
    let n = arm.dof();
    for q in [start, goal] {
        if q.len() != n {
            return Err(PlanningError::DimensionMismatch { expected: n, got: q.len() });
        }
    }
    if !cw.is_free(arm, start) {
        return Err(PlanningError::StartInCollision(cw.check(arm, start)));
    }
    if !cw.is_free(arm, goal) {
        return Err(PlanningError::GoalInCollision(cw.check(arm, goal)));
    }
    let finish = |path: Vec<JointVector>, mut stats: PlanStats| {
        stats.elapsed = began.elapsed().as_secs_f64();
        let mut trajectory = Trajectory::from_path(&path, params.validate_step);
        trajectory.validate(cw, arm, params.validate_step);
        Plan { trajectory, stats }
    };
    if start.max_abs_diff(goal) == 0.0 {
        return Ok(finish(vec![start.clone()], PlanStats { nodes: 1, ..Default::default() }));
    }
    let check_edge = |a: &[f64], b: &[f64]| cw.segment_free(arm, a, b, params.validate_step);
    if params.try_direct && check_edge(start, goal) {
        let stats = PlanStats { nodes: 2, cost_history: vec![(0, start.distance(goal))], ..Default::default() };
        return Ok(finish(vec![start.clone(), goal.clone()], stats));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let limits = &arm.joint_limits;
    let measure: f64 = limits.iter().map(|l| l.span()).product();
    let d = n as f64;
    let gamma = 2.0 * (1.0 + 1.0 / d).powf(1.0 / d) * (measure / unit_ball_volume(n)).powf(1.0 / d);
    let budget = Duration::from_secs_f64(params.max_time.max(0.0));

    let mut tree = Tree { nodes: vec![Node { q: start.0.clone(), parent: None, cost: 0.0, children: vec![] }] };
    // Nodes with a free edge to the goal, and the length of that edge.
    let mut goal_links: Vec<(usize, f64)> = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut stats = PlanStats::default();

    for iter in 0..params.max_iterations {
        if began.elapsed() > budget {
            break;
        }
        if let (Some(extra), Some(&(first, _))) = (params.refine_iterations, stats.cost_history.first()) {
            if iter >= first + extra {
                break;
            }
        }
        stats.iterations = iter + 1;
        let sample: Vec<f64> = if rng.random::<f64>() < params.goal_bias {
            goal.0.clone()
        } else {
            limits.iter().map(|l| rng.random_range(l.min..=l.max)).collect()
        };
        let near_i = tree.nearest(&sample);
        let from = &tree.nodes[near_i].q;
        let dd = dist(from, &sample);
        if dd == 0.0 {
            continue;
        }
        let q_new: Vec<f64> = if dd <= params.step {
            sample
        } else {
            from.iter().zip(&sample).map(|(a, b)| a + (b - a) * params.step / dd).collect()
        };
        if !cw.is_free(arm, &q_new) || !check_edge(&tree.nodes[near_i].q, &q_new) {
            continue;
        }
        let count = tree.nodes.len() as f64 + 1.0;
        let radius = (gamma * (count.ln() / count).powf(1.0 / d)).min(params.rewire_radius).max(params.step);
        let mut near = tree.near(&q_new, radius);
        near.sort_by(|a, b| (tree.nodes[a.0].cost + a.1).total_cmp(&(tree.nodes[b.0].cost + b.1)));

        // Cheapest parent with a free edge; the nearest node is known free.
        let mut parent = (near_i, tree.nodes[near_i].cost + dist(&tree.nodes[near_i].q, &q_new));
        for &(i, di) in &near {
            let c = tree.nodes[i].cost + di;
            if c >= parent.1 {
                break;
            }
            if check_edge(&tree.nodes[i].q, &q_new) {
                parent = (i, c);
                break;
            }
        }
        let new_i = tree.nodes.len();
        tree.nodes.push(Node { q: q_new.clone(), parent: Some(parent.0), cost: parent.1, children: vec![] });
        tree.nodes[parent.0].children.push(new_i);

        for &(i, di) in &near {
            if i == parent.0 || tree.nodes[new_i].cost + di >= tree.nodes[i].cost {
                continue;
            }
            if check_edge(&q_new, &tree.nodes[i].q) {
                let c = tree.nodes[new_i].cost + di;
                tree.reparent(i, new_i, c);
            }
        }

        let dg = dist(&q_new, goal);
        if dg <= params.step && check_edge(&q_new, goal) {
            goal_links.push((new_i, dg));
        }
        let candidate = goal_links
            .iter()
            .map(|&(i, dg)| (i, tree.nodes[i].cost + dg))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some(c) = candidate {
            if best.is_none_or(|b| c.1 < b.1) {
                best = Some(c);
                stats.cost_history.push((iter, c.1));
            }
        }
    }
    stats.nodes = tree.nodes.len();
    match best {
        Some((i, _)) => {
            let mut path = tree.path_to(i);
            if path.last().is_some_and(|q| q.max_abs_diff(goal) > 0.0) {
                path.push(goal.clone());
            }
            Ok(finish(path, stats))
        }
        None => Err(PlanningError::Timeout { iterations: stats.iterations }),
    }
}

/// Number of IK seeds tried by [`plan_to_pose`].
pub const IK_SEEDS: usize = 16;

/// Joint goal for `target` (base frame): the collision-free IK solution
/// closest to `start` among [`IK_SEEDS`] seeds, `start` first.
pub fn ik_goal(
    cw: &CollisionWorld,
    arm: &ArmModel,
    start: &JointVector,
    target: &Pose,
    seed: u64,
) -> Result<JointVector, PlanningError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1c0);
    let params = IkParams::default();
    let mut best: Option<(JointVector, f64)> = None;
    let mut converged = false;
    for k in 0..IK_SEEDS {
        let s = if k == 0 {
            start.clone()
        } else {
            JointVector(arm.joint_limits.iter().map(|l| rng.random_range(l.min..=l.max)).collect())
        };
        let Ok(sol) = solve_ik(arm, target, &s, &params) else { continue };
        converged = true;
        if !cw.is_free(arm, &sol.q) {
            continue;
        }
        let d = sol.q.distance(start);
        if best.as_ref().is_none_or(|b| d < b.1) {
            best = Some((sol.q, d));
        }
    }
    match best {
        Some((q, _)) => Ok(q),
        None if converged => Err(PlanningError::NoFreeIkSolution),
        None => Err(PlanningError::IkFailed),
    }
}

/// IK to `target` (base frame), then RRT* from `start`.
pub fn plan_to_pose(
    cw: &CollisionWorld,
    arm: &ArmModel,
    start: &JointVector,
    target: &Pose,
    params: &PlannerParams,
) -> Result<Plan, PlanningError> {
    let goal = ik_goal(cw, arm, start, target, params.seed)?;
    plan_rrt_star(cw, arm, start, &goal, params)
}
