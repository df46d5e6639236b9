use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{naive_trajectory, CollisionWorld, BASELINE_STEPS};
use crate::geom::{interpolate, Pose, UnitQuat, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RrtParams {
    pub step_translation: f64,
    pub step_rotation_deg: f64,
    pub goal_bias: f64,
    pub max_iterations: usize,
    /// Payload-surface travel between collision checks along an edge (m).
    pub edge_resolution: f64,
    /// Obstacles closer than this at the start pose are ignored near the start.
    pub start_contact: f64,
    /// End-effector travel from the start within which the contact allowance holds.
    pub allowance_travel: f64,
    /// Orientation samples stay within this angle of the start–goal slerp.
    pub max_tilt_deg: f64,
    pub shortcut_attempts: usize,
    pub seed: u64,
}

impl Default for RrtParams {
    fn default() -> Self {
        Self {
            step_translation: 0.03,
            step_rotation_deg: 15.0,
            goal_bias: 0.2,
            max_iterations: 3000,
            edge_resolution: 0.01,
            start_contact: 0.005,
            allowance_travel: 0.05,
            max_tilt_deg: 45.0,
            shortcut_attempts: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrtResult {
    pub waypoints: Vec<Pose>,
    pub found: bool,
}

/// Collision predicate with the start-contact allowance baked in.
struct Checker<'a> {
    world: &'a CollisionWorld,
    start: Vec3,
    /// Obstacles (and ground, last) touching the payload at the start.
    allowed: Vec<bool>,
    allowance_travel: f64,
    resolution: f64,
    radius: f64,
}

impl<'a> Checker<'a> {
    fn new(world: &'a CollisionWorld, start: &Pose, p: &RrtParams) -> Self {
        let allowed = world.gaps(start).iter().map(|&g| g < p.start_contact).collect();
        Self {
            world,
            start: start.position,
            allowed,
            allowance_travel: p.allowance_travel,
            resolution: p.edge_resolution,
            radius: world.payload_radius(),
        }
    }

    /// Free with at least `margin` clearance from every obstacle that counts here.
    fn free(&self, ee: &Pose, margin: f64) -> bool {
        if !self.world.workspace.contains(ee.position) {
            return false;
        }
        let near_start = (ee.position - self.start).norm() < self.allowance_travel;
        self.world
            .gaps(ee)
            .iter()
            .zip(&self.allowed)
            .all(|(&g, &allowed)| g > margin || (allowed && near_start))
    }

    /// Checks the edge at a spacing where no payload point moves more than
    /// `resolution` between samples, demanding half that as clearance so the
    /// continuous sweep between samples is covered as well.
    fn edge_free(&self, a: &Pose, b: &Pose) -> bool {
        let sweep = (b.position - a.position).norm() + a.orientation.angle_to(&b.orientation) * self.radius;
        let n = (sweep / self.resolution).ceil().max(1.0) as usize;
        let margin = 0.5 * sweep / n as f64;
        (1..=n).all(|k| self.free(&interpolate(a, b, k as f64 / n as f64).expect("t in [0, 1]"), margin))
    }
}

struct Tree {
    nodes: Vec<Pose>,
    parent: Vec<usize>,
}

impl Tree {
    fn new(root: Pose) -> Self {
        Self { nodes: vec![root], parent: vec![usize::MAX] }
    }

    fn nearest(&self, q: &Pose, rot_weight: f64) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = distance(n, q, rot_weight);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    fn push(&mut self, q: Pose, parent: usize) -> usize {
        self.nodes.push(q);
        self.parent.push(parent);
        self.nodes.len() - 1
    }

    /// Root-to-node path.
    fn path_to(&self, mut i: usize) -> Vec<Pose> {
        let mut out = vec![self.nodes[i]];
        while self.parent[i] != usize::MAX {
            i = self.parent[i];
            out.push(self.nodes[i]);
        }
        out.reverse();
        out
    }
}

fn distance(a: &Pose, b: &Pose, rot_weight: f64) -> f64 {
    (a.position - b.position).norm() + rot_weight * a.orientation.angle_to(&b.orientation)
}

enum Extend {
    Reached(usize),
    Advanced(usize),
    Trapped,
}

/// One bounded step from the nearest node toward `q`.
fn extend(tree: &mut Tree, q: &Pose, checker: &Checker, p: &RrtParams) -> Extend {
    let rot_step = p.step_rotation_deg.to_radians();
    let near = tree.nearest(q, p.step_translation / rot_step);
    let from = tree.nodes[near];
    let s = ((q.position - from.position).norm() / p.step_translation)
        .max(from.orientation.angle_to(&q.orientation) / rot_step);
    let (next, reached) = if s <= 1.0 {
        (*q, true)
    } else {
        (interpolate(&from, q, 1.0 / s).expect("t in [0, 1]"), false)
    };
    if !checker.edge_free(&from, &next) {
        return Extend::Trapped;
    }
    let id = tree.push(next, near);
    if reached {
        Extend::Reached(id)
    } else {
        Extend::Advanced(id)
    }
}

fn sample(rng: &mut ChaCha8Rng, start: &Pose, goal: &Pose, world: &CollisionWorld, p: &RrtParams) -> Pose {
    let ws = world.workspace;
    let z_lo = ws.min.z.max(0.0);
    let position = Vec3::new(
        rng.random_range(ws.min.x..=ws.max.x),
        rng.random_range(ws.min.y..=ws.max.y),
        rng.random_range(z_lo..=ws.max.z.max(z_lo)),
    );
    let base = start.orientation.slerp(&goal.orientation, rng.random());
    let axis = loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if let Ok(a) = v.normalized() {
            if v.norm() <= 1.0 {
                break a;
            }
        }
    };
    let tilt = UnitQuat::from_axis_angle(axis, rng.random_range(0.0..=p.max_tilt_deg.to_radians()))
        .expect("unit axis");
    Pose::new(position, tilt.mul(&base))
}

/// Bidirectional RRT from `start` to `goal`. On failure returns the naive
/// interpolation with `found = false`.
pub fn rrt_connect(start: &Pose, goal: &Pose, world: &CollisionWorld, params: &RrtParams) -> RrtResult {
    let fallback = || RrtResult { waypoints: naive_trajectory(start, goal, BASELINE_STEPS), found: false };
    let checker = Checker::new(world, start, params);
    if !checker.free(goal, 0.0) {
        return fallback();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut trees = [Tree::new(*start), Tree::new(*goal)];
    // trees[0] grows this iteration; `forward` is true while it is the start tree
    let mut forward = true;
    for _ in 0..params.max_iterations {
        let q = if rng.random::<f64>() < params.goal_bias {
            trees[1].nodes[0]
        } else {
            sample(&mut rng, start, goal, world, params)
        };
        let new = match extend(&mut trees[0], &q, &checker, params) {
            Extend::Trapped => None,
            Extend::Reached(i) | Extend::Advanced(i) => Some(i),
        };
        if let Some(a) = new {
            let target = trees[0].nodes[a];
            loop {
                match extend(&mut trees[1], &target, &checker, params) {
                    Extend::Advanced(_) => continue,
                    Extend::Trapped => break,
                    Extend::Reached(b) => {
                        let mut pa = trees[0].path_to(a);
                        let mut pb = trees[1].path_to(b);
                        pb.pop();
                        pb.reverse();
                        pa.extend(pb);
                        if !forward {
                            pa.reverse();
                        }
                        let path = shortcut(pa, &checker, &mut rng, params.shortcut_attempts);
                        return RrtResult { waypoints: path, found: true };
                    }
                }
            }
        }
        trees.swap(0, 1);
        forward = !forward;
    }
    fallback()
}

fn shortcut(mut path: Vec<Pose>, checker: &Checker, rng: &mut ChaCha8Rng, attempts: usize) -> Vec<Pose> {
    for _ in 0..attempts {
        if path.len() < 3 {
            break;
        }
        let i = rng.random_range(0..path.len() - 2);
        let j = rng.random_range(i + 2..path.len());
        if checker.edge_free(&path[i], &path[j]) {
            path.drain(i + 1..j);
        }
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::RESET_POSE;
    use crate::sim::{BodyShape, Sphere};

    fn ball(r: f64) -> BodyShape {
        BodyShape::new(0, vec![Sphere { center: Vec3::ZERO, radius: r }], 0.1).unwrap()
    }

    fn world_with_payload(grasp: &Pose) -> CollisionWorld {
        let mut w = CollisionWorld::default();
        let body = Pose::from_position(grasp.position - Vec3::new(0.0, 0.0, 0.02));
        w.attach_payload(&ball(0.02), &body, grasp);
        w
    }

    #[test]
    fn empty_world_goes_nearly_straight() {
        let start = Pose::from_position(Vec3::new(0.1, 0.1, 0.04));
        let w = world_with_payload(&start);
        let r = rrt_connect(&start, &RESET_POSE, &w, &RrtParams::default());
        assert!(r.found);
        assert_eq!(r.waypoints.first(), Some(&start));
        assert_eq!(r.waypoints.last(), Some(&RESET_POSE));
        let len: f64 = r.waypoints.windows(2).map(|p| (p[1].position - p[0].position).norm()).sum();
        let direct = (RESET_POSE.position - start.position).norm();
        assert!(len < 1.05 * direct, "{len} vs {direct}");
    }

    #[test]
    fn walled_goal_falls_back_to_naive() {
        let start = Pose::from_position(Vec3::new(0.0, 0.0, 0.04));
        let goal = Pose::from_position(Vec3::new(0.0, 0.0, 0.4));
        let mut w = world_with_payload(&start);
        // closed shell of spheres around the goal
        for i in -3..=3 {
            for j in -3..=3 {
                for k in -3..=3 {
                    let on_shell = [i, j, k].iter().any(|v: &i32| v.abs() == 3);
                    if on_shell {
                        let c = goal.position + Vec3::new(i as f64, j as f64, k as f64) * 0.03;
                        w.obstacles.push((c, 0.03));
                    }
                }
            }
        }
        let params = RrtParams { max_iterations: 300, ..Default::default() };
        let r = rrt_connect(&start, &goal, &w, &params);
        assert!(!r.found);
        assert_eq!(r.waypoints, naive_trajectory(&start, &goal, BASELINE_STEPS));
    }

    #[test]
    fn chimney_path_stays_clear() {
        let start = Pose::from_position(Vec3::new(0.0, 0.0, 0.04));
        let mut w = world_with_payload(&start);
        // ring walls of a vertical chimney, 0.045 m inner radius, up to 0.3 m
        for layer in 0..10 {
            for k in 0..16 {
                let a = std::f64::consts::TAU * k as f64 / 16.0;
                let c = Vec3::new(0.065 * a.cos(), 0.065 * a.sin(), 0.02 + 0.03 * layer as f64);
                w.obstacles.push((c, 0.02));
            }
        }
        let goal = Pose::from_position(Vec3::new(0.0, 0.0, 0.45));
        let r = rrt_connect(&start, &goal, &w, &RrtParams { seed: 3, ..Default::default() });
        assert!(r.found);
        for pair in r.waypoints.windows(2) {
            for k in 0..=200 {
                let q = interpolate(&pair[0], &pair[1], k as f64 / 200.0).unwrap();
                let gaps = w.gaps(&q);
                let near = (q.position - start.position).norm() < 0.05;
                assert!(gaps[..gaps.len() - 1].iter().all(|&g| g > 0.0), "{q:?}");
                assert!(near || gaps[gaps.len() - 1] > 0.0);
            }
        }
        let r2 = rrt_connect(&start, &goal, &w, &RrtParams { seed: 3, ..Default::default() });
        assert_eq!(r, r2);
    }
}
