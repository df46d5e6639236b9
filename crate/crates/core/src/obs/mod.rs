//! Grasp-centered observations: grasp selection, the heightmap, and the
//! per-object pose tokens.

mod heightmap;

pub use heightmap::{cell_of, cell_offset, Heightmap, CELL_SIZE, HEIGHTMAP_SIZE, MAX_HEIGHT};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{shortest_arc, Pose, Vec3};
use crate::sim::{SurfacePoint, NUM_CATEGORIES};

/// Number of past end-effector pose slots fed to the network.
pub const PAST_EE_SLOTS: usize = 5;

/// Suction axis in the end-effector frame.
pub const SUCTION_AXIS: Vec3 = Vec3::new(0.0, 0.0, -1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObsError {
    #[error("target has no visible surface")]
    TargetNotVisible,
    #[error("io: {0}")]
    Io(String),
}

/// Grasp at the centroid of the visible surface, suction axis pointing
/// into the surface at the sample nearest the centroid.
pub fn select_grasp(surface: &[SurfacePoint]) -> Result<Pose, ObsError> {
    if surface.is_empty() {
        return Err(ObsError::TargetNotVisible);
    }
    let centroid = surface.iter().fold(Vec3::ZERO, |s, p| s + p.point) / surface.len() as f64;
    let nearest = surface
        .iter()
        .min_by(|a, b| {
            (a.point - centroid).norm_squared().total_cmp(&(b.point - centroid).norm_squared())
        })
        .expect("nonempty");
    let orientation = shortest_arc(SUCTION_AXIS, -nearest.normal).map_err(|_| ObsError::TargetNotVisible)?;
    Ok(Pose::new(centroid, orientation))
}

/// Pose with the grasp XY subtracted; Z and orientation unchanged.
pub fn canonicalize(pose: &Pose, grasp: &Pose) -> Pose {
    Pose::new(
        Vec3::new(
            pose.position.x - grasp.position.x,
            pose.position.y - grasp.position.y,
            pose.position.z,
        ),
        pose.orientation,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectToken {
    pub target: bool,
    pub category: u8,
    /// Grasp-canonicalized pose.
    pub pose: Pose,
}

impl ObjectToken {
    pub fn one_hot(&self) -> [f64; NUM_CATEGORIES] {
        let mut v = [0.0; NUM_CATEGORIES];
        v[self.category as usize] = 1.0;
        v
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseObservation {
    pub objects: Vec<ObjectToken>,
}

impl PoseObservation {
    pub fn target_count(&self) -> usize {
        self.objects.iter().filter(|o| o.target).count()
    }
}

/// Object instance as seen by the observation builder: category, world pose, target flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedObject {
    pub category: u8,
    pub pose: Pose,
    pub is_target: bool,
}

pub fn build_pose_obs(objects: &[ObservedObject], grasp: &Pose) -> PoseObservation {
    PoseObservation {
        objects: objects
            .iter()
            .map(|o| ObjectToken {
                target: o.is_target,
                category: o.category.min(NUM_CATEGORIES as u8 - 1),
                pose: canonicalize(&o.pose, grasp),
            })
            .collect(),
    }
}

/// Network input for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationBundle {
    pub heightmap: Arc<Heightmap>,
    pub pose_obs: PoseObservation,
    /// Most recent last; at most `PAST_EE_SLOTS`, grasp-canonicalized.
    pub past_ee: Vec<Pose>,
    pub grasp: Pose,
}

impl ObservationBundle {
    pub fn new(heightmap: Heightmap, pose_obs: PoseObservation, past_ee_world: &[Pose], grasp: Pose) -> Self {
        Self::from_shared(Arc::new(heightmap), pose_obs, past_ee_world, grasp)
    }

    /// Like `new`, sharing an existing heightmap.
    pub fn from_shared(heightmap: Arc<Heightmap>, pose_obs: PoseObservation, past_ee_world: &[Pose], grasp: Pose) -> Self {
        let skip = past_ee_world.len().saturating_sub(PAST_EE_SLOTS);
        Self {
            heightmap,
            pose_obs,
            past_ee: past_ee_world[skip..].iter().map(|p| canonicalize(p, &grasp)).collect(),
            grasp,
        }
    }

    /// Flattened past-pose slots: 7 pose values and a validity bit each,
    /// zero-padded after the valid ones.
    pub fn past_ee_features(&self) -> [f64; PAST_EE_SLOTS * 8] {
        let mut out = [0.0; PAST_EE_SLOTS * 8];
        for (slot, p) in self.past_ee.iter().take(PAST_EE_SLOTS).enumerate() {
            out[slot * 8..slot * 8 + 7].copy_from_slice(&p.to_array());
            out[slot * 8 + 7] = 1.0;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::UnitQuat;
    use crate::sim::{visible_surface_points, BodyShape, Scene, Sphere};

    fn flat_patch(normal: Vec3) -> Vec<SurfacePoint> {
        let n = normal.normalized().unwrap();
        (0..25)
            .map(|i| SurfacePoint {
                point: Vec3::new((i % 5) as f64 * 0.01, (i / 5) as f64 * 0.01, 0.1),
                normal: n,
            })
            .collect()
    }

    #[test]
    fn flat_top_gives_identity() {
        let g = select_grasp(&flat_patch(Vec3::Z)).unwrap();
        assert_eq!(g.orientation, UnitQuat::IDENTITY);
        assert!((g.position - Vec3::new(0.02, 0.02, 0.1)).norm() < 1e-12);
        assert_eq!(select_grasp(&[]), Err(ObsError::TargetNotVisible));
    }

    #[test]
    fn tilted_plane_tilts_suction_axis() {
        let normal = Vec3::new(1.0, 0.0, 1.0).normalized().unwrap();
        let g = select_grasp(&flat_patch(normal)).unwrap();
        let axis = g.orientation.rotate(SUCTION_AXIS);
        assert!((axis + normal).norm() < 1e-12);
        assert!((axis.dot(SUCTION_AXIS).acos().to_degrees() - 45.0).abs() < 1e-9);
    }

    #[test]
    fn lone_sphere_grasp_above_center() {
        let mut s = Scene::new(0);
        let shape = BodyShape::new(4, vec![Sphere { center: Vec3::ZERO, radius: 0.03 }], 0.2).unwrap();
        s.add_body(shape, Pose::from_position(Vec3::new(-0.07, 0.04, 0.03)));
        let g = select_grasp(&visible_surface_points(&s, 0).unwrap()).unwrap();
        assert!((g.position.x + 0.07).abs() < 0.01 && (g.position.y - 0.04).abs() < 0.01);
        assert!(g.orientation.angle() < 0.2);
    }

    #[test]
    fn pose_obs_examples() {
        let grasp = Pose::from_position(Vec3::new(0.1, 0.2, 0.05));
        assert!(build_pose_obs(&[], &grasp).objects.is_empty());
        let q = UnitQuat::from_euler(0.1, 0.0, 0.3);
        let objs = [
            ObservedObject { category: 2, pose: Pose::new(Vec3::new(0.1, 0.2, 0.04), q), is_target: true },
            ObservedObject { category: 5, pose: Pose::from_position(Vec3::new(0.2, 0.0, 0.3)), is_target: false },
        ];
        let po = build_pose_obs(&objs, &grasp);
        assert_eq!(po.objects[0].pose.position, Vec3::new(0.0, 0.0, 0.04));
        assert_eq!(po.objects[0].pose.orientation, q);
        let p = po.objects[1].pose.position;
        assert!((p - Vec3::new(0.1, -0.2, 0.3)).norm() < 1e-15);
        assert_eq!(po.target_count(), 1);
        for o in &po.objects {
            assert_eq!(o.one_hot().iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn past_ee_keeps_latest_slots() {
        let grasp = Pose::from_position(Vec3::new(0.1, 0.1, 0.1));
        let path: Vec<Pose> =
            (0..7).map(|k| Pose::from_position(Vec3::new(0.1, 0.1, 0.1 + 0.05 * k as f64))).collect();
        let ob = ObservationBundle::new(Heightmap::default(), PoseObservation::default(), &path, grasp);
        assert_eq!(ob.past_ee.len(), PAST_EE_SLOTS);
        assert_eq!(ob.past_ee[PAST_EE_SLOTS - 1].position.z, path[6].position.z);
        assert_eq!(ob.past_ee[0].position.x, 0.0);
        let f = ob.past_ee_features();
        assert_eq!(f[7], 1.0);
        let short = ObservationBundle::new(Heightmap::default(), PoseObservation::default(), &path[..1], grasp);
        let f = short.past_ee_features();
        assert_eq!(f[7], 1.0);
        assert!(f[8..].iter().all(|&v| v == 0.0));
    }
}
