//! Safety metrics, the heightmap-difference metric, and the paired benchmark.

mod bench;
mod plot;

pub use bench::{
    estimated_objects, parse_csv, run_benchmark, BenchmarkConfig, BenchmarkReport, EpisodeRow, Policy,
    BENCHMARK_FORMAT, CSV_COLUMNS,
};
pub use plot::bar_chart_svg;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapping::{BinaryImage, MappingError};
use crate::obs::{Heightmap, ObsError, CELL_SIZE, HEIGHTMAP_SIZE};
use crate::sim::{BodyId, MotionLog, SimError};
use crate::train::TrainError;

/// Height changes below this are ignored by the diff metric (m).
pub const DIFF_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mask is {0}x{1}, heightmap is {2}x{2}")]
    ShapeMismatch(usize, usize, usize),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyMetrics {
    /// Summed net displacement of non-target bodies (m).
    pub sum_translations: f64,
    /// Summed peak linear speed of non-target bodies (m/s).
    pub sum_max_velocities: f64,
}

pub fn safety_metrics(log: &MotionLog, target: BodyId) -> SafetyMetrics {
    let others = |v: Vec<f64>| v.into_iter().enumerate().filter(|(i, _)| *i != target).map(|(_, x)| x).sum();
    SafetyMetrics { sum_translations: others(log.displacements()), sum_max_velocities: others(log.max_speeds()) }
}

/// Percentage of non-target cells whose height changed by more than
/// `threshold`, and the changed volume over those cells in liters.
pub fn heightmap_diff(
    before: &Heightmap,
    after: &Heightmap,
    target_mask: &BinaryImage,
    threshold: f64,
) -> Result<(f64, f64), EvalError> {
    if target_mask.width() != HEIGHTMAP_SIZE || target_mask.height() != HEIGHTMAP_SIZE {
        return Err(EvalError::ShapeMismatch(target_mask.width(), target_mask.height(), HEIGHTMAP_SIZE));
    }
    if !(threshold > 0.0) {
        return Err(EvalError::InvalidArgument(format!("threshold {threshold}")));
    }
    let mut cells = 0usize;
    let mut changed = 0usize;
    let mut volume = 0.0;
    for ((&a, &b), &is_target) in before.data().iter().zip(after.data()).zip(target_mask.data()) {
        if is_target {
            continue;
        }
        cells += 1;
        let d = (b - a).abs();
        if d > threshold {
            changed += 1;
            volume += d * CELL_SIZE * CELL_SIZE;
        }
    }
    if cells == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((100.0 * changed as f64 / cells as f64, volume * 1000.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Pose, Vec3};
    use crate::sim::{execute_trajectory, BodyShape, Scene, Sphere, StepRecord};

    fn log(start: &[Vec3], records: &[(&[Vec3], &[f64])]) -> MotionLog {
        let mut l = MotionLog::new(0, start.iter().map(|p| Pose::from_position(*p)).collect());
        for (k, (p, s)) in records.iter().enumerate() {
            l.records.push(StepRecord {
                time: k as f64,
                poses: p.iter().map(|p| Pose::from_position(*p)).collect(),
                speeds: s.to_vec(),
            });
        }
        l
    }

    #[test]
    fn metric_examples() {
        let a = [Vec3::ZERO, Vec3::X];
        let m = safety_metrics(&log(&a, &[(&a, &[0.0, 0.0])]), 0);
        assert_eq!(m, SafetyMetrics { sum_translations: 0.0, sum_max_velocities: 0.0 });
        let moved = [Vec3::new(0.0, 0.0, 0.3), Vec3::X + Vec3::new(0.0, 0.12, 0.0)];
        let m = safety_metrics(&log(&a, &[(&a, &[2.0, 0.8]), (&moved, &[1.0, 0.1])]), 0);
        assert!((m.sum_translations - 0.12).abs() < 1e-12);
        assert_eq!(m.sum_max_velocities, 0.8);
    }

    #[test]
    fn dropped_object_is_fast_but_barely_displaced() {
        let ball = BodyShape::new(4, vec![Sphere { center: Vec3::ZERO, radius: 0.02 }], 0.1).unwrap();
        let mut s = Scene::new(0);
        s.add_body(ball.clone(), Pose::from_position(Vec3::new(0.3, 0.0, 0.02)));
        s.add_body(ball, Pose::from_position(Vec3::new(0.0, 0.0, 0.1)));
        let l = execute_trajectory(&mut s, 0, &[], 1.0).unwrap();
        let m = safety_metrics(&l, 0);
        // read the oracle values straight off the log
        let fall = (l.start_poses[1].position - l.final_poses()[1].position).norm();
        let peak = l.records.iter().map(|r| r.speeds[1]).fold(0.0, f64::max);
        assert_eq!(m.sum_translations, fall);
        assert_eq!(m.sum_max_velocities, peak);
        assert!(m.sum_max_velocities > 10.0 * m.sum_translations);
    }

    #[test]
    fn diff_examples() {
        let before = Heightmap::default();
        let empty = BinaryImage::new(HEIGHTMAP_SIZE, HEIGHTMAP_SIZE);
        assert_eq!(heightmap_diff(&before, &before, &empty, DIFF_THRESHOLD).unwrap(), (0.0, 0.0));
        let after = Heightmap::from_points(&[Vec3::new(0.0, 0.0, 0.05)], &Pose::IDENTITY);
        let mask = BinaryImage::from_fn(HEIGHTMAP_SIZE, HEIGHTMAP_SIZE, |i| i < 10);
        let (pct, vol) = heightmap_diff(&before, &after, &mask, DIFF_THRESHOLD).unwrap();
        assert_eq!(vol, 0.0008);
        assert!((pct - 100.0 / (128.0 * 128.0 - 10.0)).abs() < 1e-12);
        let small = Heightmap::from_points(&[Vec3::new(0.0, 0.0, 0.005)], &Pose::IDENTITY);
        assert_eq!(heightmap_diff(&before, &small, &mask, DIFF_THRESHOLD).unwrap(), (0.0, 0.0));
        // symmetric in before/after
        assert_eq!(
            heightmap_diff(&after, &before, &mask, DIFF_THRESHOLD).unwrap(),
            heightmap_diff(&before, &after, &mask, DIFF_THRESHOLD).unwrap()
        );
        assert!(heightmap_diff(&before, &after, &BinaryImage::new(4, 4), DIFF_THRESHOLD).is_err());
    }
}
