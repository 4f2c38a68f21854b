use std::collections::{BTreeSet, HashSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Primitive, Shape};
use crate::kinematics::ArmModel;
use crate::perception::PointCloud;

/// Occupied cells of a uniform grid; a cell is marked when any point falls
/// in it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub resolution: f64,
    cells: HashSet<(i64, i64, i64)>,
}

impl VoxelGrid {
    pub fn new(resolution: f64) -> Self {
        Self { resolution, cells: HashSet::new() }
    }

    fn key(&self, p: &Vector3<f64>) -> (i64, i64, i64) {
        let r = self.resolution;
        ((p.x / r).floor() as i64, (p.y / r).floor() as i64, (p.z / r).floor() as i64)
    }

    fn center(&self, k: (i64, i64, i64)) -> Vector3<f64> {
        let r = self.resolution;
        Vector3::new((k.0 as f64 + 0.5) * r, (k.1 as f64 + 0.5) * r, (k.2 as f64 + 0.5) * r)
    }

    pub fn insert(&mut self, p: &Vector3<f64>) {
        let k = self.key(p);
        self.cells.insert(k);
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.cells.contains(&self.key(p))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Removes every cell whose center lies within `margin` of `prim`.
    pub fn clear_in(&mut self, prim: &Primitive, margin: f64) {
        let centers: Vec<_> = self.cells.iter().map(|k| (*k, self.center(*k))).collect();
        for (k, c) in centers {
            if prim.signed_distance(&c) <= margin {
                self.cells.remove(&k);
            }
        }
    }

    /// True when any occupied cell comes closer than `radius` to the
    /// segment, treating each cell as a sphere around its center.
    fn hits_capsule(&self, a: &Vector3<f64>, b: &Vector3<f64>, radius: f64) -> bool {
        if self.cells.is_empty() {
            return false;
        }
        let half_diag = self.resolution * 3f64.sqrt() / 2.0;
        let reach = radius + half_diag;
        let lo = self.key(&(a.inf(b) - Vector3::repeat(reach)));
        let hi = self.key(&(a.sup(b) + Vector3::repeat(reach)));
        for i in lo.0..=hi.0 {
            for j in lo.1..=hi.1 {
                for k in lo.2..=hi.2 {
                    if self.cells.contains(&(i, j, k))
                        && point_segment(&self.center((i, j, k)), a, b) < reach
                    {
                        return true;
                    }
                }
            }
        }
        false
    }
}

fn point_segment(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let t = if l2 > 0.0 { ((p - a).dot(&ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

fn segment_segment(p1: &Vector3<f64>, q1: &Vector3<f64>, p2: &Vector3<f64>, q2: &Vector3<f64>) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a <= 1e-18 && e <= 1e-18 {
        return r.norm();
    }
    if a <= 1e-18 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= 1e-18 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 1e-18 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Capsule (segment `a`–`b` in the end-effector frame, radius) carried with
/// the gripper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttachedBody {
    pub name: String,
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

impl AttachedBody {
    /// Capsule enclosing `shape` at `pose` (both in the end-effector frame).
    pub fn enclosing(name: impl Into<String>, pose: &Pose, shape: &Shape) -> Self {
        let (half, radius) = match *shape {
            Shape::Box { half_extents: h } => (h[2], (h[0] * h[0] + h[1] * h[1]).sqrt()),
            Shape::Capsule { half_length, radius } => (half_length, radius),
            Shape::Sphere { radius } => (0.0, radius),
            Shape::Plane => (0.0, 0.0),
        };
        Self {
            name: name.into(),
            a: pose.transform_point(&Vector3::new(0.0, 0.0, -half)),
            b: pose.transform_point(&Vector3::new(0.0, 0.0, half)),
            radius,
        }
    }
}

/// Named pair of bodies in contact. Self contacts name both links.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Contact {
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Free,
    Colliding(Vec<Contact>),
}

impl Verdict {
    pub fn is_free(&self) -> bool {
        matches!(self, Verdict::Free)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Obstacle {
    prim: Primitive,
    /// Bounding sphere center and radius; infinite for planes.
    center: Vector3<f64>,
    bound: f64,
}

impl Obstacle {
    fn new(prim: Primitive) -> Self {
        let bound = match prim.shape {
            Shape::Box { half_extents } => Vector3::from(half_extents).norm(),
            Shape::Sphere { radius } => radius,
            Shape::Capsule { half_length, radius } => half_length + radius,
            Shape::Plane => f64::INFINITY,
        };
        Self { center: prim.pose.translation, bound, prim }
    }
}

/// Everything the arm must avoid, in the arm base frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionWorld {
    obstacles: Vec<Obstacle>,
    pub voxels: VoxelGrid,
    allowed: BTreeSet<(String, String)>,
    pub attached: Option<AttachedBody>,
    /// Bodies closer than this count as colliding (m).
    pub margin: f64,
}

pub const VOXEL_NAME: &str = "point_cloud";
pub const DEFAULT_VOXEL_RESOLUTION: f64 = 0.02;

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl Default for CollisionWorld {
    fn default() -> Self {
        Self::new()
    }
}

impl CollisionWorld {
    pub fn new() -> Self {
        Self {
            obstacles: Vec::new(),
            voxels: VoxelGrid::new(DEFAULT_VOXEL_RESOLUTION),
            allowed: BTreeSet::new(),
            attached: None,
            margin: 0.0,
        }
    }

    /// Primitives given in the world frame, stored in the base frame.
    pub fn from_world_primitives(prims: &[Primitive], base_in_world: &Pose) -> Self {
        let mut cw = Self::new();
        let to_base = base_in_world.inverse();
        for p in prims {
            cw.add_primitive(p.transformed(&to_base));
        }
        cw
    }

    pub fn add_primitive(&mut self, prim: Primitive) {
        self.obstacles.push(Obstacle::new(prim));
    }

    pub fn remove_primitive(&mut self, name: &str) {
        self.obstacles.retain(|o| o.prim.name != name);
    }

    pub fn primitives(&self) -> impl Iterator<Item = &Primitive> {
        self.obstacles.iter().map(|o| &o.prim)
    }

    /// Adds the cloud (in the stereo frame) given the stereo pose in the base
    /// frame.
    pub fn add_point_cloud(&mut self, cloud: &PointCloud, stereo_in_base: &Pose) {
        for p in &cloud.points {
            self.voxels.insert(&stereo_in_base.transform_point(p));
        }
    }

    pub fn allow(&mut self, a: &str, b: &str) {
        self.allowed.insert(ordered(a, b));
    }

    pub fn disallow(&mut self, a: &str, b: &str) {
        self.allowed.remove(&ordered(a, b));
    }

    pub fn is_allowed(&self, a: &str, b: &str) -> bool {
        self.allowed.contains(&ordered(a, b))
    }

    /// Moving capsules in the base frame: `(name, link index, a, b, r)`.
    /// Attached bodies get link index `dof`.
    fn moving(&self, arm: &ArmModel, q: &[f64]) -> Vec<(String, usize, Vector3<f64>, Vector3<f64>, f64)> {
        let poses = arm.forward_kinematics(q).expect("valid configuration");
        let mut out: Vec<_> = arm
            .world_capsules(&poses)
            .into_iter()
            .map(|(i, a, b, r)| (arm.links[i].name.clone(), i, a, b, r))
            .collect();
        if let Some(att) = &self.attached {
            let ee = poses[arm.dof()];
            out.push((att.name.clone(), arm.dof(), ee.transform_point(&att.a), ee.transform_point(&att.b), att.radius));
        }
        out
    }

    /// Full verdict listing every colliding pair.
    pub fn check(&self, arm: &ArmModel, q: &[f64]) -> Verdict {
        let mut contacts = BTreeSet::new();
        self.scan(arm, q, &mut |c| {
            contacts.insert(c);
            false
        });
        if contacts.is_empty() {
            Verdict::Free
        } else {
            Verdict::Colliding(contacts.into_iter().collect())
        }
    }

    /// Stops at the first contact.
    pub fn is_free(&self, arm: &ArmModel, q: &[f64]) -> bool {
        let mut hit = false;
        self.scan(arm, q, &mut |_| {
            hit = true;
            true
        });
        !hit
    }

    /// Calls `found` for each contact; stops when it returns true.
    fn scan(&self, arm: &ArmModel, q: &[f64], found: &mut dyn FnMut(Contact) -> bool) {
        let bodies = self.moving(arm, q);
        let n = arm.dof();
        for (name, _, a, b, r) in &bodies {
            let mid = (a + b) / 2.0;
            let half = (b - a).norm() / 2.0;
            for o in &self.obstacles {
                if self.is_allowed(name, &o.prim.name) {
                    continue;
                }
                if o.bound.is_finite() && (mid - o.center).norm() > o.bound + half + r + self.margin {
                    continue;
                }
                if o.prim.segment_distance(a, b) < r + self.margin {
                    if found(Contact { a: name.clone(), b: o.prim.name.clone() }) {
                        return;
                    }
                }
            }
            if !self.is_allowed(name, VOXEL_NAME) && self.voxels.hits_capsule(a, b, r + self.margin) {
                if found(Contact { a: name.clone(), b: VOXEL_NAME.into() }) {
                    return;
                }
            }
        }
        for x in 0..bodies.len() {
            for y in x + 1..bodies.len() {
                let (na, ia, a0, a1, ra) = &bodies[x];
                let (nb, ib, b0, b1, rb) = &bodies[y];
                if ia == ib {
                    continue;
                }
                let skip = if *ib == n || *ia == n {
                    // The held body touches the last two links by design.
                    (*ia).min(*ib) + 2 >= n
                } else {
                    arm.skips_self_pair(*ia, *ib)
                };
                if skip || self.is_allowed(na, nb) {
                    continue;
                }
                if segment_segment(a0, a1, b0, b1) < ra + rb {
                    if found(Contact { a: na.clone(), b: nb.clone() }) {
                        return;
                    }
                }
            }
        }
    }

    /// Every configuration on the straight joint-space segment, sampled so
    /// that no joint moves more than `step` between checks, is free.
    pub fn segment_free(&self, arm: &ArmModel, from: &[f64], to: &[f64], step: f64) -> bool {
        let span = from.iter().zip(to).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let k = (span / step).ceil().max(1.0) as usize;
        let mut q = vec![0.0; from.len()];
        for i in 1..=k {
            let u = i as f64 / k as f64;
            for (j, v) in q.iter_mut().enumerate() {
                *v = from[j] + (to[j] - from[j]) * u;
            }
            if !self.is_free(arm, &q) {
                return false;
            }
        }
        true
    }
}
