use std::path::Path;

use serde::{Deserialize, Serialize};

use super::execute::MotionLog;
use super::scene::{Aabb, BodyId, RigidBody, Scene, SimParams};
use super::shape::{primitive_catalog, BodyShape};
use super::SimError;
use crate::geom::{Pose, Vec3};

pub const SCENE_FORMAT: &str = "pilepick-scene";
pub const REPLAY_FORMAT: &str = "pilepick-replay";
const VERSION: u32 = 1;
const CATALOG: &str = "primitives-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BodyRecord {
    category: u8,
    pose: Pose,
    linear_velocity: Vec3,
    angular_velocity: Vec3,
    kinematic: bool,
    /// Present only when the body is not the catalog shape of its category.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape: Option<BodyShape>,
}

/// JSON scene snapshot. Catalog bodies are stored by category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    format: String,
    version: u32,
    catalog: String,
    seed: u64,
    workspace: Aabb,
    gravity: Vec3,
    ground: bool,
    params: SimParams,
    time: f64,
    bodies: Vec<BodyRecord>,
}

impl SceneFile {
    pub fn from_scene(scene: &Scene) -> Self {
        let catalog = primitive_catalog();
        let bodies = scene
            .bodies
            .iter()
            .map(|b| BodyRecord {
                category: b.category(),
                pose: b.pose,
                linear_velocity: b.linear_velocity,
                angular_velocity: b.angular_velocity,
                kinematic: b.kinematic,
                shape: (catalog.get(b.category() as usize) != Some(&b.shape)).then(|| b.shape.clone()),
            })
            .collect();
        Self {
            format: SCENE_FORMAT.into(),
            version: VERSION,
            catalog: CATALOG.into(),
            seed: scene.rng_seed,
            workspace: scene.workspace,
            gravity: scene.gravity,
            ground: scene.ground,
            params: scene.params,
            time: scene.time,
            bodies,
        }
    }

    pub fn to_scene(&self) -> Result<Scene, SimError> {
        if self.format != SCENE_FORMAT || self.version != VERSION {
            return Err(SimError::Format(format!(
                "unsupported scene format {} v{}",
                self.format, self.version
            )));
        }
        let catalog = primitive_catalog();
        let mut scene = Scene::new(self.seed);
        scene.workspace = self.workspace;
        scene.gravity = self.gravity;
        scene.ground = self.ground;
        scene.params = self.params;
        scene.time = self.time;
        for (id, r) in self.bodies.iter().enumerate() {
            let shape = match &r.shape {
                Some(s) => s.clone(),
                None => catalog
                    .get(r.category as usize)
                    .cloned()
                    .ok_or_else(|| SimError::Format(format!("unknown category {}", r.category)))?,
            };
            scene.bodies.push(RigidBody {
                id,
                shape,
                pose: r.pose,
                linear_velocity: r.linear_velocity,
                angular_velocity: r.angular_velocity,
                kinematic: r.kinematic,
            });
        }
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SimError> {
        serde_json::from_str(s).map_err(|e| SimError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.to_json()).map_err(|e| SimError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let s = std::fs::read_to_string(path).map_err(|e| SimError::Format(e.to_string()))?;
        Self::from_json(&s)
    }
}

/// Everything needed to re-run an execution and compare the motion log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayFile {
    pub format: String,
    pub version: u32,
    pub scene: SceneFile,
    pub target: BodyId,
    /// One waypoint list per executed segment, each with its settle time.
    pub segments: Vec<(Vec<Pose>, f64)>,
    pub log: MotionLog,
}

impl ReplayFile {
    pub fn new(initial: &Scene, target: BodyId, segments: Vec<(Vec<Pose>, f64)>, log: MotionLog) -> Self {
        Self {
            format: REPLAY_FORMAT.into(),
            version: VERSION,
            scene: SceneFile::from_scene(initial),
            target,
            segments,
            log,
        }
    }

    /// Re-executes every segment on a fresh copy of the initial scene.
    pub fn rerun(&self) -> Result<MotionLog, SimError> {
        if self.format != REPLAY_FORMAT || self.version != VERSION {
            return Err(SimError::Format(format!(
                "unsupported replay format {} v{}",
                self.format, self.version
            )));
        }
        let mut scene = self.scene.to_scene()?;
        let mut combined: Option<MotionLog> = None;
        for (wps, settle) in &self.segments {
            let log = super::execute_trajectory(&mut scene, self.target, wps, *settle)?;
            match combined.as_mut() {
                Some(c) => c.extend(log),
                None => combined = Some(log),
            }
        }
        Ok(combined.unwrap_or_else(|| {
            MotionLog::new(self.target, scene.bodies.iter().map(|b| b.pose).collect())
        }))
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let s = serde_json::to_string(self).map_err(|e| SimError::Format(e.to_string()))?;
        std::fs::write(path, s).map_err(|e| SimError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let s = std::fs::read_to_string(path).map_err(|e| SimError::Format(e.to_string()))?;
        serde_json::from_str(&s).map_err(|e| SimError::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{execute_trajectory, spawn_pile, Sphere};

    #[test]
    fn scene_json_round_trip_is_exact() {
        let mut s = Scene::new(5);
        spawn_pile(&mut s, &primitive_catalog(), 3, 5).unwrap();
        let odd = BodyShape::new(3, vec![Sphere { center: Vec3::ZERO, radius: 0.01 }], 0.05).unwrap();
        s.add_body(odd, Pose::from_position(Vec3::new(0.2, 0.2, 0.01)));
        let file = SceneFile::from_scene(&s);
        let back = SceneFile::from_json(&file.to_json()).unwrap().to_scene().unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn replay_reproduces_log() {
        let mut s = Scene::new(1);
        spawn_pile(&mut s, &primitive_catalog(), 3, 1).unwrap();
        let initial = s.clone();
        let g = Pose::from_position(s.bodies[0].pose.position);
        let wps = vec![g, Pose::from_position(g.position + Vec3::new(0.0, 0.0, 0.05))];
        let log = execute_trajectory(&mut s, 0, &wps, 0.2).unwrap();
        let replay = ReplayFile::new(&initial, 0, vec![(wps, 0.2)], log.clone());
        let text = serde_json::to_string(&replay).unwrap();
        let parsed: ReplayFile = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.rerun().unwrap(), log);
    }

    #[test]
    fn rejects_wrong_format() {
        let mut f = SceneFile::from_scene(&Scene::new(0));
        f.version = 99;
        assert!(f.to_scene().is_err());
    }
}
