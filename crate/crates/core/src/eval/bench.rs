use std::fmt::Write as _;
use std::sync::Arc;

use super::{heightmap_diff, safety_metrics, EvalError, SafetyMetrics, DIFF_THRESHOLD};
use crate::mapping::{orbit_cameras, orbit_scan, BinaryImage, InstanceMap, MapConfig, ORBIT_HEIGHT, ORBIT_RADIUS, ORBIT_VIEWS};
use crate::obs::{build_pose_obs, Heightmap, ObservedObject, HEIGHTMAP_SIZE};
use crate::percept::NoiseParams;
use crate::plan::{
    heuristic_up, naive_trajectory, rrt_connect, CollisionWorld, RrtParams, BASELINE_STEPS, HEURISTIC_HEIGHT,
    RESET_POSE,
};
use crate::qnet::{greedy_action, QNetwork};
use crate::sim::{execute_trajectory, BodyShape, MotionLog, Scene};
use crate::train::{run_episode, setup_episode, EpisodeSetup};

pub const BENCHMARK_FORMAT: &str = "# pilepick-benchmark v1";
pub const CSV_COLUMNS: &str =
    "seed,policy,noise,sum_translations_m,sum_max_vel_mps,diff_mask_pct,diff_volume_l,episode_wall_s";

#[derive(Debug, Clone)]
pub enum Policy {
    Naive,
    Heuristic,
    Rrt(RrtParams),
    /// Greedy policy of a trained network.
    Learned { label: String, net: Arc<QNetwork> },
}

impl Policy {
    pub fn name(&self) -> String {
        match self {
            Policy::Naive => "naive".into(),
            Policy::Heuristic => "heuristic".into(),
            Policy::Rrt(_) => "rrt".into(),
            Policy::Learned { label, .. } => format!("learned:{label}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkConfig {
    pub objects: usize,
    /// Perception noise for the mapping scan; `None` scans noiselessly.
    pub noise: Option<NoiseParams>,
    pub settle_time: f64,
    pub episode_steps: usize,
    pub diff_threshold: f64,
    /// Seeds are spread over this many threads; output order is unaffected.
    pub threads: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            objects: 4,
            noise: None,
            settle_time: 1.0,
            episode_steps: BASELINE_STEPS,
            diff_threshold: DIFF_THRESHOLD,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub seed: u64,
    pub policy: String,
    pub noise: bool,
    pub metrics: SafetyMetrics,
    pub diff_mask_pct: f64,
    pub diff_volume_l: f64,
    /// Simulated duration of the episode (s).
    pub episode_wall_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<EpisodeRow>,
    /// Seeds that produced rows, in order.
    pub seeds: Vec<u64>,
    /// Seeds dropped for every policy, with the reason.
    pub skipped: Vec<(u64, String)>,
    pub noise: Option<NoiseParams>,
}

impl BenchmarkReport {
    /// Policy names in first-appearance order.
    pub fn policies(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.policy) {
                out.push(r.policy.clone());
            }
        }
        out
    }

    pub fn mean(&self, policy: &str) -> Option<SafetyMetrics> {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.policy == policy).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some(SafetyMetrics {
            sum_translations: rows.iter().map(|r| r.metrics.sum_translations).sum::<f64>() / n,
            sum_max_velocities: rows.iter().map(|r| r.metrics.sum_max_velocities).sum::<f64>() / n,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{BENCHMARK_FORMAT}\n{CSV_COLUMNS}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.seed,
                r.policy,
                if r.noise { "on" } else { "off" },
                r.metrics.sum_translations,
                r.metrics.sum_max_velocities,
                r.diff_mask_pct,
                r.diff_volume_l,
                r.episode_wall_s
            );
        }
        s
    }
}

pub fn parse_csv(text: &str) -> Result<Vec<EpisodeRow>, EvalError> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CSV_COLUMNS => {}
        other => return Err(EvalError::Csv(format!("unexpected header {other:?}"))),
    }
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| EvalError::Csv(format!("bad number {v:?}")));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(EvalError::Csv(format!("expected 8 fields: {l}")));
            }
            Ok(EpisodeRow {
                seed: f[0].trim().parse().map_err(|_| EvalError::Csv(format!("bad seed {:?}", f[0])))?,
                policy: f[1].to_string(),
                noise: f[2] == "on",
                metrics: SafetyMetrics { sum_translations: num(f[3])?, sum_max_velocities: num(f[4])? },
                diff_mask_pct: num(f[5])?,
                diff_volume_l: num(f[6])?,
                episode_wall_s: num(f[7])?,
            })
        })
        .collect()
}

/// Object list from the map: every instance with a pose estimate (the
/// shape-model pose when available, else its latest hypothesis).
pub fn estimated_objects(map: &InstanceMap, target_instance: usize) -> Vec<ObservedObject> {
    map.instances()
        .iter()
        .filter_map(|inst| {
            let pose = inst.cad_pose.or_else(|| inst.hypotheses.last().map(|h| h.pose))?;
            Some(ObservedObject { category: inst.category, pose, is_target: inst.id == target_instance })
        })
        .collect()
}

fn shape_of(catalog: &[BodyShape], category: u8) -> Option<&BodyShape> {
    catalog.iter().find(|s| s.category() == category)
}

fn per_seed_noise(noise: &NoiseParams, seed: u64) -> NoiseParams {
    NoiseParams { seed: noise.seed.wrapping_add(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)), ..*noise }
}

struct Prepared {
    setup: EpisodeSetup,
    objects: Vec<ObservedObject>,
    before: Heightmap,
    target_mask: BinaryImage,
}

fn prepare(seed: u64, config: &BenchmarkConfig, catalog: &[BodyShape]) -> Result<Prepared, EvalError> {
    let setup = setup_episode(catalog, config.objects, seed)?;
    let mut map = InstanceMap::new(catalog.to_vec(), MapConfig::default());
    let cams = orbit_cameras(crate::geom::Vec3::ZERO, ORBIT_VIEWS, ORBIT_RADIUS, ORBIT_HEIGHT);
    let noise = config.noise.map_or(NoiseParams::off(seed), |n| per_seed_noise(&n, seed));
    let scan = orbit_scan(&setup.scene, &mut map, &cams, &noise, 0)?;
    let target_instance = scan.body_instance[setup.target]
        .ok_or_else(|| EvalError::InvalidArgument("target was not mapped".into()))?;
    let objects = estimated_objects(&map, target_instance);
    if !objects.iter().any(|o| o.is_target) {
        return Err(EvalError::InvalidArgument("target has no pose estimate".into()));
    }
    let (before, owner) = Heightmap::from_scene_with_owner(&setup.scene, &setup.grasp, None);
    let target_mask =
        BinaryImage::from_fn(HEIGHTMAP_SIZE, HEIGHTMAP_SIZE, |i| owner[i] == Some(setup.target));
    Ok(Prepared { setup, objects, before, target_mask })
}

fn rrt_world(p: &Prepared, catalog: &[BodyShape]) -> CollisionWorld {
    let mut world = CollisionWorld::default();
    for o in &p.objects {
        let Some(shape) = shape_of(catalog, o.category) else { continue };
        if o.is_target {
            world.attach_payload(shape, &o.pose, &p.setup.grasp);
        } else {
            world.add_obstacle(shape, &o.pose);
        }
    }
    world
}

fn run_policy(
    policy: &Policy,
    p: &Prepared,
    config: &BenchmarkConfig,
    catalog: &[BodyShape],
) -> Result<(MotionLog, Scene), EvalError> {
    let mut scene = p.setup.scene.clone();
    let (target, grasp) = (p.setup.target, p.setup.grasp);
    let mut waypoints = match policy {
        Policy::Naive => naive_trajectory(&grasp, &RESET_POSE, BASELINE_STEPS),
        Policy::Heuristic => heuristic_up(&grasp, HEURISTIC_HEIGHT, BASELINE_STEPS),
        Policy::Rrt(params) => {
            let params = RrtParams { seed: params.seed ^ p.setup.seed, ..*params };
            rrt_connect(&grasp, &RESET_POSE, &rrt_world(p, catalog), &params).waypoints
        }
        Policy::Learned { net, .. } => {
            let pose_obs = build_pose_obs(&p.objects, &grasp);
            let r = run_episode(
                &mut scene,
                target,
                grasp,
                p.before.clone(),
                pose_obs,
                config.episode_steps,
                config.settle_time,
                |o| greedy_action(&net.forward_all(o)),
            )?;
            return Ok((r.log, scene));
        }
    };
    if waypoints.last() != Some(&RESET_POSE) {
        waypoints.push(RESET_POSE);
    }
    let log = execute_trajectory(&mut scene, target, &waypoints, config.settle_time)?;
    Ok((log, scene))
}

fn run_seed(
    seed: u64,
    policies: &[Policy],
    config: &BenchmarkConfig,
    catalog: &[BodyShape],
) -> Result<Vec<EpisodeRow>, EvalError> {
    let p = prepare(seed, config, catalog)?;
    let t0 = p.setup.scene.time;
    policies
        .iter()
        .map(|policy| {
            let (log, scene) = run_policy(policy, &p, config, catalog)?;
            let metrics = safety_metrics(&log, p.setup.target);
            let after = Heightmap::from_scene_with_owner(&scene, &p.setup.grasp, Some(p.setup.target)).0;
            let (diff_mask_pct, diff_volume_l) =
                heightmap_diff(&p.before, &after, &p.target_mask, config.diff_threshold)?;
            Ok(EpisodeRow {
                seed,
                policy: policy.name(),
                noise: config.noise.is_some(),
                metrics,
                diff_mask_pct,
                diff_volume_l,
                episode_wall_s: log.records.last().map_or(0.0, |r| r.time - t0),
            })
        })
        .collect()
}

/// Runs every policy from the identical initial state of every seed's pile.
/// A seed that fails for any policy is dropped for all of them.
pub fn run_benchmark(
    policies: &[Policy],
    seeds: &[u64],
    config: &BenchmarkConfig,
    catalog: &[BodyShape],
) -> Result<BenchmarkReport, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::InvalidArgument("no seeds".into()));
    }
    if policies.is_empty() {
        return Err(EvalError::InvalidArgument("no policies".into()));
    }
    let threads = config.threads.clamp(1, seeds.len());
    let mut results: Vec<Option<Result<Vec<EpisodeRow>, EvalError>>> = vec![None; seeds.len()];
    if threads == 1 {
        for (slot, &seed) in results.iter_mut().zip(seeds) {
            *slot = Some(run_seed(seed, policies, config, catalog));
        }
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    s.spawn(move || {
                        (t..seeds.len())
                            .step_by(threads)
                            .map(|i| (i, run_seed(seeds[i], policies, config, catalog)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("benchmark thread panicked") {
                    results[i] = Some(r);
                }
            }
        });
    }
    let mut report = BenchmarkReport { rows: Vec::new(), seeds: Vec::new(), skipped: Vec::new(), noise: config.noise };
    for (r, &seed) in results.into_iter().zip(seeds) {
        match r.expect("every seed ran") {
            Ok(rows) => {
                report.rows.extend(rows);
                report.seeds.push(seed);
            }
            Err(e) => report.skipped.push((seed, e.to_string())),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Pose, Vec3};
    use crate::sim::{primitive_catalog, Sphere};

    #[test]
    fn benchmark_is_deterministic_and_paired() {
        let cat = primitive_catalog();
        let policies = [Policy::Naive, Policy::Heuristic];
        let cfg = BenchmarkConfig { objects: 3, settle_time: 0.3, ..Default::default() };
        let a = run_benchmark(&policies, &[1, 2], &cfg, &cat).unwrap();
        let b = run_benchmark(&policies, &[1, 2], &BenchmarkConfig { threads: 2, ..cfg }, &cat).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 2 * a.seeds.len());
        assert_eq!(a.policies(), vec!["naive".to_string(), "heuristic".to_string()]);
        for r in &a.rows {
            assert!(r.metrics.sum_translations >= 0.0 && r.metrics.sum_max_velocities >= 0.0);
            assert!(r.episode_wall_s > 0.0);
        }
        assert_eq!(parse_csv(&a.to_csv()).unwrap(), a.rows);
        assert!(run_benchmark(&policies, &[], &cfg, &cat).is_err());
    }

    #[test]
    fn lifting_beats_dragging_with_a_stacked_neighbor() {
        // flat slab target on the ground with a block resting on top of it
        let slab = BodyShape::new(
            2,
            (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| Sphere { center: Vec3::new(-0.03 + 0.03 * i as f64, -0.03 + 0.03 * j as f64, 0.0), radius: 0.02 })
                .collect(),
            0.3,
        )
        .unwrap();
        let block = BodyShape::new(0, vec![Sphere { center: Vec3::ZERO, radius: 0.025 }], 0.1).unwrap();
        let mut scene = Scene::new(0);
        scene.add_body(slab, Pose::from_position(Vec3::new(0.15, 0.15, 0.02)));
        scene.add_body(block, Pose::from_position(Vec3::new(0.18, 0.15, 0.065)));
        for _ in 0..240 {
            scene.step(scene.params.dt).unwrap();
        }
        let grasp = Pose::from_position(Vec3::new(0.15, 0.15, 0.04));
        let mut naive = scene.clone();
        let mut wps = naive_trajectory(&grasp, &RESET_POSE, BASELINE_STEPS);
        let ln = execute_trajectory(&mut naive, 0, &wps, 1.0).unwrap();
        let mut up = scene.clone();
        wps = heuristic_up(&grasp, HEURISTIC_HEIGHT, BASELINE_STEPS);
        wps.push(RESET_POSE);
        let lh = execute_trajectory(&mut up, 0, &wps, 1.0).unwrap();
        let (n, h) = (safety_metrics(&ln, 0), safety_metrics(&lh, 0));
        assert!(h.sum_translations <= n.sum_translations, "heuristic {h:?} naive {n:?}");
    }
}
