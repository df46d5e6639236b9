use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{reward, TrainError, Transition};
use crate::geom::{Pose, Vec3};
use crate::obs::{select_grasp, Heightmap, ObsError, ObservationBundle, ObservedObject, PoseObservation};
use crate::percept::{oracle_pose, visibilities, Camera, NoiseParams};
use crate::plan::RESET_POSE;
use crate::qnet::{encode_action, ActionIndex};
use crate::sim::{execute_trajectory, spawn_pile, visible_surface_points, BodyId, BodyShape, MotionLog, Scene};

/// Targets are drawn among bodies whose visibility lies in this range.
pub const TARGET_VISIBILITY: (f64, f64) = (0.05, 0.95);

/// Overhead camera used for target selection and training-time noise.
pub fn observation_camera() -> Camera {
    let eye = Vec3::new(0.0, 0.0, 0.8);
    Camera::mapping_view(Camera::look_at(eye, Vec3::ZERO).expect("eye above origin"))
}

/// A generated pile with its target and grasp.
#[derive(Debug, Clone)]
pub struct EpisodeSetup {
    pub seed: u64,
    pub scene: Scene,
    pub target: BodyId,
    pub grasp: Pose,
    /// Per-body visibility in the overhead camera.
    pub visibility: Vec<f64>,
}

/// Uniform over partially occluded bodies with a visible top surface; falls
/// back to the least visible body that still shows some top surface.
pub fn select_target(scene: &Scene, visibility: &[f64], seed: u64) -> Result<BodyId, ObsError> {
    let has_surface = |b: BodyId| visible_surface_points(scene, b).map(|s| !s.is_empty()).unwrap_or(false);
    let (lo, hi) = TARGET_VISIBILITY;
    let mut candidates: Vec<BodyId> = (0..scene.bodies.len()).filter(|&b| (lo..=hi).contains(&visibility[b])).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    candidates.shuffle(&mut rng);
    if let Some(&b) = candidates.iter().find(|&&b| has_surface(b)) {
        return Ok(b);
    }
    let mut rest: Vec<BodyId> = (0..scene.bodies.len()).filter(|&b| visibility[b] > 0.0).collect();
    rest.sort_by(|&a, &b| visibility[a].total_cmp(&visibility[b]).then(a.cmp(&b)));
    rest.into_iter().find(|&b| has_surface(b)).ok_or(ObsError::TargetNotVisible)
}

pub fn setup_episode(catalog: &[BodyShape], objects: usize, seed: u64) -> Result<EpisodeSetup, TrainError> {
    let mut scene = Scene::new(seed);
    spawn_pile(&mut scene, catalog, objects, seed)?;
    let (visibility, _, _) = visibilities(&scene, &observation_camera());
    let target = select_target(&scene, &visibility, seed)?;
    let grasp = select_grasp(&visible_surface_points(&scene, target)?)?;
    Ok(EpisodeSetup { seed, scene, target, grasp, visibility })
}

/// Every body at its true pose.
pub fn truth_objects(scene: &Scene, target: BodyId) -> Vec<ObservedObject> {
    scene
        .bodies
        .iter()
        .map(|b| ObservedObject { category: b.category(), pose: b.pose, is_target: b.id == target })
        .collect()
}

/// True poses passed through the perception noise model: each non-target
/// body is missed with probability `miss_scale · (1 − φ)`, and every pose
/// is perturbed by `oracle_pose`. Deterministic in `(noise.seed, call)`.
pub fn noisy_objects(
    scene: &Scene,
    target: BodyId,
    visibility: &[f64],
    noise: &NoiseParams,
    call: u64,
) -> Vec<ObservedObject> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    rng.set_stream((2 << 40) | call);
    let mut out = Vec::new();
    for b in &scene.bodies {
        let phi = visibility[b.id];
        let u: f64 = rng.random();
        if b.id != target && u < noise.miss_scale * (1.0 - phi) {
            continue;
        }
        let pose = oracle_pose(&b.pose, phi, noise, (3 << 40) | (call << 8) | b.id as u64);
        out.push(ObservedObject { category: b.category(), pose, is_target: b.id == target });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub obs: ObservationBundle,
    pub action: ActionIndex,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub steps: Vec<EpisodeStep>,
    /// Observation after the last action.
    pub final_obs: ObservationBundle,
    /// Whole-episode motion log (all segments, then the settle window).
    pub log: MotionLog,
    /// Executed `(waypoints, settle_time)` segments, for replays.
    pub segments: Vec<(Vec<Pose>, f64)>,
    /// Grasp followed by every commanded end-effector pose.
    pub ee_path: Vec<Pose>,
}

impl EpisodeResult {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn transitions(&self) -> Vec<Transition> {
        let n = self.steps.len();
        self.steps
            .iter()
            .enumerate()
            .map(|(t, s)| Transition {
                obs: s.obs.clone(),
                action: s.action,
                reward: s.reward,
                next_obs: if t + 1 < n { self.steps[t + 1].obs.clone() } else { self.final_obs.clone() },
                terminal: t + 1 == n,
            })
            .collect()
    }
}

/// Runs `steps` policy actions from `grasp`. Each action moves the end
/// effector by one relative delta; the last step continues to the reset
/// pose and includes the settle window. The heightmap and object poses are
/// observed once at the start; only the end-effector history evolves.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    scene: &mut Scene,
    target: BodyId,
    grasp: Pose,
    heightmap: Heightmap,
    pose_obs: PoseObservation,
    steps: usize,
    settle_time: f64,
    mut policy: impl FnMut(&ObservationBundle) -> ActionIndex,
) -> Result<EpisodeResult, TrainError> {
    let hm = Arc::new(heightmap);
    let observe = |path: &[Pose]| ObservationBundle::from_shared(hm.clone(), pose_obs.clone(), path, grasp);
    let mut path = vec![grasp];
    let mut out_steps = Vec::with_capacity(steps);
    let mut segments = Vec::with_capacity(steps);
    let mut log: Option<MotionLog> = None;
    for t in 0..steps {
        let obs = observe(&path);
        let action = policy(&obs);
        let from = *path.last().expect("nonempty");
        let next = from.apply_delta(&encode_action(action));
        let terminal = t + 1 == steps;
        let mut waypoints = vec![from, next];
        let settle = if terminal {
            waypoints.push(RESET_POSE);
            settle_time
        } else {
            0.0
        };
        let seg = execute_trajectory(scene, target, &waypoints, settle)?;
        let r = reward(&seg, target);
        match log.as_mut() {
            Some(l) => l.extend(seg),
            None => log = Some(seg),
        }
        segments.push((waypoints, settle));
        out_steps.push(EpisodeStep { obs, action, reward: r });
        path.push(next);
    }
    let log = log.unwrap_or_else(|| MotionLog::new(target, scene.bodies.iter().map(|b| b.pose).collect()));
    Ok(EpisodeResult { steps: out_steps, final_obs: observe(&path), log, segments, ee_path: path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obs::build_pose_obs;
    use crate::qnet::IDENTITY_ACTION;
    use crate::sim::{primitive_catalog, Sphere};

    fn episode(setup: &EpisodeSetup, policy: impl FnMut(&ObservationBundle) -> ActionIndex) -> EpisodeResult {
        let mut scene = setup.scene.clone();
        let hm = Heightmap::from_scene(&scene, &setup.grasp);
        let po = build_pose_obs(&truth_objects(&scene, setup.target), &setup.grasp);
        run_episode(&mut scene, setup.target, setup.grasp, hm, po, 5, 0.5, policy).unwrap()
    }

    #[test]
    fn setup_is_deterministic_and_partially_occluded() {
        let cat = primitive_catalog();
        let a = setup_episode(&cat, 4, 11).unwrap();
        let b = setup_episode(&cat, 4, 11).unwrap();
        assert_eq!(a.scene, b.scene);
        assert_eq!((a.target, a.grasp), (b.target, b.grasp));
        assert_eq!(a.scene.bodies.len(), 4);
    }

    #[test]
    fn random_episode_is_reproducible() {
        let setup = setup_episode(&primitive_catalog(), 3, 5).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            episode(&setup, |_| ActionIndex::new(rng.random_range(0..729)).unwrap())
        };
        let (a, b) = (run(), run());
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.log, b.log);
        assert!(a.steps.iter().all(|s| s.reward <= 0.0));
        let ts = a.transitions();
        assert_eq!(ts.len(), 5);
        for w in ts.windows(2) {
            assert_eq!(w[0].next_obs, w[1].obs);
            assert!(!w[0].terminal);
        }
        assert!(ts[4].terminal);
    }

    #[test]
    fn identity_policy_holds_the_grasp() {
        let setup = setup_episode(&primitive_catalog(), 3, 2).unwrap();
        let r = episode(&setup, |_| IDENTITY_ACTION);
        assert!(r.ee_path.iter().all(|p| *p == setup.grasp));
        assert_eq!(r.steps.len(), 5);
    }

    #[test]
    fn lone_target_has_zero_penalty() {
        let mut scene = Scene::new(0);
        let ball = BodyShape::new(4, vec![Sphere { center: Vec3::ZERO, radius: 0.03 }], 0.2).unwrap();
        scene.add_body(ball, Pose::from_position(Vec3::new(0.05, 0.0, 0.03)));
        let grasp = select_grasp(&visible_surface_points(&scene, 0).unwrap()).unwrap();
        let hm = Heightmap::from_scene(&scene, &grasp);
        let po = build_pose_obs(&truth_objects(&scene, 0), &grasp);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = run_episode(&mut scene, 0, grasp, hm, po, 5, 0.5, |_| {
            ActionIndex::new(rng.random_range(0..729)).unwrap()
        })
        .unwrap();
        assert_eq!(r.total_reward(), 0.0);
    }

    #[test]
    fn noise_drops_and_perturbs_deterministically() {
        let setup = setup_episode(&primitive_catalog(), 4, 3).unwrap();
        let noise = NoiseParams::ablation(5);
        let a = noisy_objects(&setup.scene, setup.target, &setup.visibility, &noise, 1);
        assert_eq!(a, noisy_objects(&setup.scene, setup.target, &setup.visibility, &noise, 1));
        assert_eq!(a.iter().filter(|o| o.is_target).count(), 1);
        let off = noisy_objects(&setup.scene, setup.target, &setup.visibility, &NoiseParams::off(5), 1);
        assert_eq!(off, truth_objects(&setup.scene, setup.target));
    }
}
