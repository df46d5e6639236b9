//! Baseline extraction trajectories: naive interpolation to the reset pose,
//! straight-up lifting, and RRT-Connect over end-effector poses.

mod rrt;

pub use rrt::{rrt_connect, RrtParams, RrtResult};

use crate::geom::{interpolate, Pose, Vec3};
use crate::sim::{default_workspace, Aabb, BodyShape, Sphere};

/// Where every episode ends: 0.5 m above the workspace origin, suction down.
pub const RESET_POSE: Pose = Pose::from_position(Vec3::new(0.0, 0.0, 0.5));

/// Waypoint count of the naive and heuristic baselines (the learned policy's step budget).
pub const BASELINE_STEPS: usize = 5;
pub const HEURISTIC_HEIGHT: f64 = 0.25;

/// `steps + 1` poses interpolated uniformly from `grasp` to `reset`.
pub fn naive_trajectory(grasp: &Pose, reset: &Pose, steps: usize) -> Vec<Pose> {
    let steps = steps.max(1);
    (0..=steps)
        .map(|k| interpolate(grasp, reset, k as f64 / steps as f64).expect("t in [0, 1]"))
        .collect()
}

/// `steps + 1` poses rising straight up from `grasp` by `height` in total.
pub fn heuristic_up(grasp: &Pose, height: f64, steps: usize) -> Vec<Pose> {
    let steps = steps.max(1);
    (0..=steps)
        .map(|k| {
            let mut p = *grasp;
            if k == steps {
                p.position.z += height;
            } else {
                p.position.z += height * k as f64 / steps as f64;
            }
            p
        })
        .collect()
}

/// Static sphere obstacles plus a payload rigidly attached to the end effector.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionWorld {
    /// World-frame sphere centers and radii.
    pub obstacles: Vec<(Vec3, f64)>,
    /// Payload spheres in the end-effector frame.
    pub payload: Vec<Sphere>,
    pub workspace: Aabb,
    /// Treat `z = 0` as an obstacle.
    pub ground: bool,
}

impl Default for CollisionWorld {
    fn default() -> Self {
        Self { obstacles: Vec::new(), payload: Vec::new(), workspace: default_workspace(), ground: true }
    }
}

impl CollisionWorld {
    pub fn add_obstacle(&mut self, shape: &BodyShape, pose: &Pose) {
        self.obstacles
            .extend(shape.spheres().iter().map(|s| (pose.transform_point(s.center), s.radius)));
    }

    /// Attaches `shape`, currently at `body_pose`, to an end effector at `grasp`.
    pub fn attach_payload(&mut self, shape: &BodyShape, body_pose: &Pose, grasp: &Pose) {
        let attach = grasp.inverse().compose(body_pose);
        self.payload = shape
            .spheres()
            .iter()
            .map(|s| Sphere { center: attach.transform_point(s.center), radius: s.radius })
            .collect();
    }

    /// Farthest payload surface point from the end-effector origin.
    pub fn payload_radius(&self) -> f64 {
        self.payload.iter().map(|s| s.center.norm() + s.radius).fold(0.0, f64::max)
    }

    /// Smallest surface gap between the payload at `ee` and each obstacle
    /// (index `obstacles.len()` is the ground). Negative means overlap.
    pub fn gaps(&self, ee: &Pose) -> Vec<f64> {
        let mut out = vec![f64::INFINITY; self.obstacles.len() + 1];
        for s in &self.payload {
            let c = ee.transform_point(s.center);
            for (g, (o, r)) in out.iter_mut().zip(&self.obstacles) {
                *g = g.min((c - *o).norm() - r - s.radius);
            }
            if self.ground {
                let g = &mut out[self.obstacles.len()];
                *g = g.min(c.z - s.radius);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::UnitQuat;

    #[test]
    fn naive_examples() {
        let g = Pose::new(Vec3::new(0.1, -0.1, 0.05), UnitQuat::from_euler(0.3, 0.0, 0.0));
        assert_eq!(naive_trajectory(&g, &RESET_POSE, 1), vec![g, RESET_POSE]);
        let path = naive_trajectory(&g, &g, 5);
        assert!(path.iter().all(|p| (p.position - g.position).norm() < 1e-15));
        let path = naive_trajectory(&g, &RESET_POSE, 4);
        assert_eq!(path.len(), 5);
        assert_eq!(path[0], g);
        assert_eq!(path[4], RESET_POSE);
        let mid = (g.position + RESET_POSE.position) / 2.0;
        assert!((path[2].position - mid).norm() < 1e-15);
    }

    #[test]
    fn heuristic_examples() {
        let g = Pose::new(Vec3::new(0.1, 0.02, 0.04), UnitQuat::from_euler(0.0, 0.2, 0.1));
        let path = heuristic_up(&g, 0.25, 5);
        assert_eq!(path.len(), 6);
        for (k, p) in path.iter().enumerate() {
            assert_eq!((p.position.x, p.position.y), (g.position.x, g.position.y));
            assert_eq!(p.orientation, g.orientation);
            if k > 0 {
                assert!((p.position.z - path[k - 1].position.z - 0.05).abs() < 1e-12);
            }
        }
        assert!((path[5].position.z - g.position.z - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gaps_measure_sphere_distances() {
        let mut w = CollisionWorld::default();
        let ball = BodyShape::new(0, vec![Sphere { center: Vec3::ZERO, radius: 0.02 }], 0.1).unwrap();
        w.add_obstacle(&ball, &Pose::from_position(Vec3::new(0.1, 0.0, 0.02)));
        w.attach_payload(&ball, &Pose::from_position(Vec3::new(0.0, 0.0, 0.02)), &Pose::from_position(Vec3::new(0.0, 0.0, 0.04)));
        let g = w.gaps(&Pose::from_position(Vec3::new(0.0, 0.0, 0.04)));
        assert!((g[0] - 0.06).abs() < 1e-12);
        assert!(g[1].abs() < 1e-12);
        assert!((w.payload_radius() - 0.04).abs() < 1e-12);
    }
}
