use super::{AssociationReport, InstanceMap, MappingError};
use crate::geom::Vec3;
use crate::percept::{oracle_detect, oracle_pose, render, Camera, NoiseParams};
use crate::sim::{BodyId, Scene};

pub const ORBIT_VIEWS: usize = 8;
pub const ORBIT_RADIUS: f64 = 0.5;
/// Camera height above the look-at point; with the radius this gives 45° elevation.
pub const ORBIT_HEIGHT: f64 = 0.5;

/// `n` mapping cameras evenly spaced on a horizontal circle around `center`,
/// all looking at it.
pub fn orbit_cameras(center: Vec3, n: usize, radius: f64, height: f64) -> Vec<Camera> {
    (0..n)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / n as f64;
            let eye = center + Vec3::new(radius * a.cos(), radius * a.sin(), height);
            Camera::mapping_view(Camera::look_at(eye, center).expect("eye above center"))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanReport {
    pub views: Vec<AssociationReport>,
    /// Highest per-view visibility of every scene body.
    pub max_visibility: Vec<f64>,
    /// For every scene body, the instance most of its accepted detections fused into.
    pub body_instance: Vec<Option<usize>>,
}

fn pose_call(view: usize, body: BodyId) -> u64 {
    (1u64 << 40) | ((view as u64) << 20) | body as u64
}

/// Runs the detection and pose oracles in every camera and integrates the
/// views into `map` in order. `view_offset` keeps oracle draws distinct
/// across repeated scans with the same noise seed.
pub fn orbit_scan(
    scene: &Scene,
    map: &mut InstanceMap,
    cameras: &[Camera],
    noise: &NoiseParams,
    view_offset: usize,
) -> Result<ScanReport, MappingError> {
    let n = scene.bodies.len();
    let mut votes: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut report = ScanReport { max_visibility: vec![0.0; n], ..Default::default() };
    for (k, cam) in cameras.iter().enumerate() {
        let view = view_offset + k;
        let found = oracle_detect(scene, cam, noise, view as u64);
        let mut detections = Vec::with_capacity(found.len());
        for f in &found {
            let mut d = f.detection.clone();
            d.pose = Some(oracle_pose(&scene.bodies[f.body].pose, f.visibility, noise, pose_call(view, f.body)));
            detections.push(d);
        }
        let depth = render(scene, cam).depth;
        let assoc = map.integrate_view(&detections, cam, &depth)?;
        for (di, f) in found.iter().enumerate() {
            if let Some(inst) = assoc.instance_of(di) {
                votes[f.body].push(inst);
            }
        }
        let (vis, _, _) = crate::percept::visibilities(scene, cam);
        for (m, v) in report.max_visibility.iter_mut().zip(vis) {
            *m = m.max(v);
        }
        report.views.push(assoc);
    }
    report.body_instance = votes
        .into_iter()
        .map(|v| {
            let mut counts: Vec<(usize, usize)> = Vec::new();
            for i in v {
                match counts.iter_mut().find(|(id, _)| *id == i) {
                    Some(c) => c.1 += 1,
                    None => counts.push((i, 1)),
                }
            }
            counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            counts.first().map(|c| c.0)
        })
        .collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;
    use crate::mapping::MapConfig;
    use crate::sim::primitive_catalog;

    #[test]
    fn orbit_looks_at_center_at_45_degrees() {
        let cams = orbit_cameras(Vec3::ZERO, 8, ORBIT_RADIUS, ORBIT_HEIGHT);
        assert_eq!(cams.len(), 8);
        for c in &cams {
            let fwd = c.pose.orientation.rotate(Vec3::Z);
            let to_center = (-c.pose.position).normalized().unwrap();
            assert!((fwd - to_center).norm() < 1e-9);
            assert!((fwd.z + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        }
    }

    #[test]
    fn single_object_is_mapped_and_replaced() {
        let cat = primitive_catalog();
        let mut scene = Scene::new(0);
        let truth = Pose::new(Vec3::new(0.02, -0.01, 0.04), crate::geom::UnitQuat::from_euler(0.0, 0.0, 0.4));
        scene.add_body(cat[1].clone(), truth);
        let mut map = InstanceMap::new(cat.clone(), MapConfig::default());
        let cams = orbit_cameras(Vec3::ZERO, 4, ORBIT_RADIUS, ORBIT_HEIGHT);
        let rep = orbit_scan(&scene, &mut map, &cams, &NoiseParams::off(0), 0).unwrap();
        assert_eq!(map.instances().len(), 1);
        assert_eq!(rep.body_instance, vec![Some(0)]);
        let q = map.query_target(cat[1].category()).unwrap();
        let pose = q.pose.expect("replaced after consistent views");
        assert!((pose.position - truth.position).norm() < 1e-9);
        assert!(!q.surface.is_empty());
    }
}
