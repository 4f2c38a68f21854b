//! Convex terrain / link primitives with ray casting and segment distance
//! queries. Each primitive lives in its own frame given by `pose`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned in the primitive frame.
    Box { half_extents: [f64; 3] },
    Sphere { radius: f64 },
    /// Segment from `-half_length` to `+half_length` along local z.
    Capsule { half_length: f64, radius: f64 },
    /// Solid half-space `z <= 0` of the primitive frame.
    Plane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub name: String,
    pub pose: Pose,
    #[serde(flatten)]
    pub shape: Shape,
}

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit direction.
    pub dir: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, dir: Vector3<f64>) -> Self {
        Self { origin, dir: dir.normalize() }
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.dir * t
    }
}

impl Shape {
    pub fn validate(&self) -> Result<(), String> {
        let ok = match self {
            Shape::Box { half_extents } => half_extents.iter().all(|h| *h > 0.0),
            Shape::Sphere { radius } => *radius > 0.0,
            Shape::Capsule { half_length, radius } => *half_length >= 0.0 && *radius > 0.0,
            Shape::Plane => true,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("non-positive dimension in {self:?}"))
        }
    }
}

impl Primitive {
    pub fn new(name: impl Into<String>, pose: Pose, shape: Shape) -> Self {
        Self { name: name.into(), pose, shape }
    }

    /// Same primitive expressed in another frame: `frame_from_here` maps this
    /// primitive's parent frame into the new one.
    pub fn transformed(&self, frame_from_here: &Pose) -> Self {
        Self {
            name: self.name.clone(),
            pose: frame_from_here.compose(&self.pose),
            shape: self.shape,
        }
    }

    /// Signed distance from a point to the surface (negative inside).
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        let local = self.pose.inverse().transform_point(p);
        local_signed_distance(&self.shape, &local)
    }

    /// Smallest `t >= 0` at which the ray enters the primitive.
    pub fn ray_cast(&self, ray: &Ray) -> Option<f64> {
        let inv = self.pose.inverse();
        let o = inv.transform_point(&ray.origin);
        let d = inv.transform_vector(&ray.dir);
        match self.shape {
            Shape::Sphere { radius } => ray_sphere(&o, &d, &Vector3::zeros(), radius),
            Shape::Box { half_extents } => ray_box(&o, &d, &Vector3::from(half_extents)),
            Shape::Plane => {
                if o.z <= 0.0 {
                    return Some(0.0);
                }
                if d.z >= 0.0 {
                    None
                } else {
                    Some(-o.z / d.z)
                }
            }
            Shape::Capsule { half_length, radius } => ray_capsule(&o, &d, half_length, radius),
        }
    }

    /// Minimum signed distance between a segment and the primitive surface.
    pub fn segment_distance(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        let inv = self.pose.inverse();
        let la = inv.transform_point(a);
        let lb = inv.transform_point(b);
        match self.shape {
            Shape::Sphere { radius } => point_segment_distance(&Vector3::zeros(), &la, &lb) - radius,
            Shape::Capsule { half_length, radius } => {
                let c0 = Vector3::new(0.0, 0.0, -half_length);
                let c1 = Vector3::new(0.0, 0.0, half_length);
                segment_segment_distance(&la, &lb, &c0, &c1) - radius
            }
            Shape::Plane => la.z.min(lb.z),
            Shape::Box { .. } => {
                let f = |t: f64| local_signed_distance(&self.shape, &(la + (lb - la) * t));
                minimize_convex_unit(f)
            }
        }
    }
}

fn local_signed_distance(shape: &Shape, p: &Vector3<f64>) -> f64 {
    match *shape {
        Shape::Sphere { radius } => p.norm() - radius,
        Shape::Box { half_extents } => {
            let q = p.abs() - Vector3::from(half_extents);
            let outside = q.map(|v| v.max(0.0)).norm();
            let inside = q.x.max(q.y).max(q.z).min(0.0);
            outside + inside
        }
        Shape::Capsule { half_length, radius } => {
            let z = p.z.clamp(-half_length, half_length);
            (p - Vector3::new(0.0, 0.0, z)).norm() - radius
        }
        Shape::Plane => p.z,
    }
}

/// Golden-section minimisation of a convex function on [0, 1].
fn minimize_convex_unit(f: impl Fn(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..60 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    f1.min(f2).min(f(0.0)).min(f(1.0))
}

fn ray_sphere(o: &Vector3<f64>, d: &Vector3<f64>, c: &Vector3<f64>, r: f64) -> Option<f64> {
    let oc = o - c;
    let b = oc.dot(d);
    let cc = oc.norm_squared() - r * r;
    if cc <= 0.0 {
        return Some(0.0);
    }
    let disc = b * b - cc;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, h: &Vector3<f64>) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i].abs() > h[i] {
                return None;
            }
            continue;
        }
        let t1 = (-h[i] - o[i]) / d[i];
        let t2 = (h[i] - o[i]) / d[i];
        t_near = t_near.max(t1.min(t2));
        t_far = t_far.min(t1.max(t2));
    }
    if t_near > t_far || t_far < 0.0 {
        None
    } else {
        Some(t_near.max(0.0))
    }
}

fn ray_capsule(o: &Vector3<f64>, d: &Vector3<f64>, half: f64, r: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut take = |t: Option<f64>| {
        if let Some(t) = t {
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    };
    take(ray_sphere(o, d, &Vector3::new(0.0, 0.0, -half), r));
    take(ray_sphere(o, d, &Vector3::new(0.0, 0.0, half), r));
    // Infinite cylinder x² + y² = r², clipped to |z| <= half.
    let a = d.x * d.x + d.y * d.y;
    let b = o.x * d.x + o.y * d.y;
    let c = o.x * o.x + o.y * o.y - r * r;
    if c <= 0.0 && o.z.abs() <= half {
        take(Some(0.0));
    } else if a > 1e-15 {
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let t = (-b - disc.sqrt()) / a;
            if t >= 0.0 && (o.z + t * d.z).abs() <= half {
                take(Some(t));
            }
        }
    }
    best
}

pub(crate) fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 < 1e-30 { 0.0 } else { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) };
    (p - (a + ab * t)).norm()
}

/// Closest distance between segments `p1-q1` and `p2-q2`.
pub(crate) fn segment_segment_distance(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> f64 {
    const EPS: f64 = 1e-14;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a <= EPS && e <= EPS {
        return r.norm();
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
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
