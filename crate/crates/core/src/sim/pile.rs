use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::scene::{Aabb, Scene};
use super::shape::BodyShape;
use super::SimError;
use crate::geom::{Pose, UnitQuat, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PileConfig {
    /// Region where spawned bodies appear before dropping.
    pub spawn_bbox: Aabb,
    /// A spawn has settled once every dynamic body is slower than this (m/s).
    pub settle_speed: f64,
    pub settle_timeout: f64,
    pub max_retries: usize,
}

impl Default for PileConfig {
    fn default() -> Self {
        Self {
            spawn_bbox: Aabb::new(Vec3::new(-0.15, -0.15, 0.3), Vec3::new(0.15, 0.15, 0.6)),
            settle_speed: 1e-3,
            settle_timeout: 2.0,
            max_retries: 10,
        }
    }
}

/// Uniformly distributed rotation.
pub fn random_orientation<R: Rng>(rng: &mut R) -> UnitQuat {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        if let Ok(q) = UnitQuat::from_xyzw(v[0], v[1], v[2], v[3]) {
            if q.norm() > 0.5 {
                return q.canonical();
            }
        }
    }
}

pub fn spawn_pile(scene: &mut Scene, catalog: &[BodyShape], n: usize, seed: u64) -> Result<(), SimError> {
    spawn_pile_with(scene, catalog, n, seed, &PileConfig::default())
}

/// Drops `n` random catalog bodies one at a time, letting each settle.
/// Bodies that come to rest outside the workspace are removed and replaced.
pub fn spawn_pile_with(
    scene: &mut Scene,
    catalog: &[BodyShape],
    n: usize,
    seed: u64,
    config: &PileConfig,
) -> Result<(), SimError> {
    if n == 0 {
        return Err(SimError::InvalidArgument("pile needs at least one body".into()));
    }
    if catalog.is_empty() {
        return Err(SimError::InvalidArgument("empty catalog".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = scene.bodies.len() + n;
    let mut retries = 0;
    let dt = scene.params.dt;
    let max_steps = (config.settle_timeout / dt).ceil() as usize;
    while scene.bodies.len() < target {
        let shape = catalog[rng.random_range(0..catalog.len())].clone();
        let b = config.spawn_bbox;
        let pose = Pose::new(
            Vec3::new(
                rng.random_range(b.min.x..=b.max.x),
                rng.random_range(b.min.y..=b.max.y),
                rng.random_range(b.min.z..=b.max.z),
            ),
            random_orientation(&mut rng),
        );
        scene.add_body(shape, pose);
        for _ in 0..max_steps {
            scene.step(dt)?;
            if scene.max_dynamic_speed() < config.settle_speed {
                break;
            }
        }
        let mut removed = false;
        while let Some(out) = scene
            .bodies
            .iter()
            .position(|body| !body.kinematic && !scene.workspace.contains(body.pose.position))
        {
            scene.remove_body(out)?;
            removed = true;
        }
        if removed {
            retries += 1;
            if retries > config.max_retries {
                return Err(SimError::PileGeneration(format!(
                    "could not place {n} bodies inside the workspace after {} retries",
                    config.max_retries
                )));
            }
        }
    }
    for body in scene.bodies.iter_mut() {
        body.linear_velocity = Vec3::ZERO;
        body.angular_velocity = Vec3::ZERO;
    }
    scene.reset_contact_cache();
    Ok(())
}
