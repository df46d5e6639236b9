//! Deterministic sphere-compound rigid-body simulation.
//!
//! Bodies are unions of spheres. Contacts (sphere/sphere and sphere/ground)
//! are resolved with sequential impulses and Coulomb friction at a fixed
//! 1/240 s step. The same state and command sequence always reproduce the
//! same motion bit for bit.

mod execute;
mod io;
mod pile;
mod scene;
mod shape;

pub use execute::{
    execute_trajectory, payload_radius, MotionLog, StepRecord, DEFAULT_SETTLE_TIME, TIP_SPEED,
};
pub use io::{ReplayFile, SceneFile, REPLAY_FORMAT, SCENE_FORMAT};
pub use pile::{random_orientation, spawn_pile, spawn_pile_with, PileConfig};
pub use scene::{default_workspace, Aabb, BodyId, RigidBody, Scene, SimParams, DEFAULT_DT, MAX_SPEED};
pub use shape::{primitive_catalog, BodyShape, Sphere, NUM_CATEGORIES};

use thiserror::Error;

use crate::geom::Vec3;
use crate::percept::RayScene;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("unknown body {0}")]
    UnknownBody(BodyId),
    #[error("simulation diverged: body {body} reached {speed} m/s")]
    Diverged { body: BodyId, speed: f64 },
    #[error("pile generation failed: {0}")]
    PileGeneration(String),
    #[error("scene file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub point: Vec3,
    pub normal: Vec3,
}

/// Grid spacing of the top-down surface sampling (m).
pub const SURFACE_SAMPLE_SPACING: f64 = 0.002;

/// Surface points of `target` visible from straight above, with outward
/// normals of the hit spheres. Empty when the target is fully covered.
pub fn visible_surface_points(scene: &Scene, target: BodyId) -> Result<Vec<SurfacePoint>, SimError> {
    let body = scene.body(target)?;
    let rays = RayScene::new(scene);
    let c = body.pose.position;
    let r = body.shape.bounding_radius();
    let n = (r / SURFACE_SAMPLE_SPACING).ceil() as i64;
    let top = scene
        .bodies
        .iter()
        .map(|b| b.pose.position.z + b.shape.bounding_radius())
        .fold(0.0, f64::max)
        + 1.0;
    let mut out = Vec::new();
    for j in -n..=n {
        for i in -n..=n {
            let x = c.x + i as f64 * SURFACE_SAMPLE_SPACING;
            let y = c.y + j as f64 * SURFACE_SAMPLE_SPACING;
            if let Some(hit) = rays.cast(Vec3::new(x, y, top), -Vec3::Z) {
                if hit.body == target {
                    out.push(SurfacePoint { point: hit.point, normal: hit.normal });
                }
            }
        }
    }
    Ok(out)
}
