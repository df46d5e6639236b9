use crate::geom::Vec3;
use crate::sim::{BodyId, Scene};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub body: BodyId,
    /// Distance along the (unit) ray direction.
    pub t: f64,
    pub point: Vec3,
    /// Outward surface normal of the hit sphere.
    pub normal: Vec3,
}

/// Nearest non-negative intersection of a unit-direction ray with a sphere.
pub fn ray_sphere(origin: Vec3, dir: Vec3, center: Vec3, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    if t0 >= 0.0 {
        return Some(t0);
    }
    let t1 = -b + sq;
    (t1 >= 0.0 && c > 0.0).then_some(t1)
}

struct BodySpheres {
    id: BodyId,
    center: Vec3,
    bound: f64,
    spheres: Vec<(Vec3, f64)>,
}

/// World-space sphere cache for repeated ray queries against a frozen scene.
pub struct RayScene {
    bodies: Vec<BodySpheres>,
}

impl RayScene {
    pub fn new(scene: &Scene) -> Self {
        Self::filtered(scene, |_| true)
    }

    pub fn filtered(scene: &Scene, keep: impl Fn(BodyId) -> bool) -> Self {
        let bodies = scene
            .bodies
            .iter()
            .filter(|b| keep(b.id))
            .map(|b| BodySpheres {
                id: b.id,
                center: b.pose.position,
                bound: b.shape.bounding_radius(),
                spheres: b.world_spheres().collect(),
            })
            .collect();
        Self { bodies }
    }

    pub fn is_empty(&self) -> bool {
        self.bodies.is_empty()
    }

    /// Bounding spheres `(id, center, radius)` of the cached bodies.
    pub fn bounds(&self) -> impl Iterator<Item = (BodyId, Vec3, f64)> + '_ {
        self.bodies.iter().map(|b| (b.id, b.center, b.bound))
    }

    pub fn cast(&self, origin: Vec3, dir: Vec3) -> Option<Hit> {
        let mut best: Option<(f64, BodyId, Vec3, f64)> = None;
        for b in &self.bodies {
            let limit = best.map_or(f64::INFINITY, |h| h.0);
            let inside = (origin - b.center).norm_squared() <= b.bound * b.bound;
            if !inside {
                match ray_sphere(origin, dir, b.center, b.bound) {
                    Some(t) if t < limit => {}
                    _ => continue,
                }
            }
            for &(c, r) in &b.spheres {
                if let Some(t) = ray_sphere(origin, dir, c, r) {
                    if t < limit && best.map_or(true, |h| t < h.0) {
                        best = Some((t, b.id, c, r));
                    }
                }
            }
        }
        best.map(|(t, body, c, r)| {
            let point = origin + dir * t;
            Hit { body, t, point, normal: (point - c) / r }
        })
    }
}
