//! Deep Q-learning: episode collection, replay, Bellman targets against a
//! periodically synced target network, and the collector/learner loop.

mod config;
mod env;
mod learner;
mod run;

pub use config::TrainerConfig;
pub use env::{
    noisy_objects, observation_camera, run_episode, select_target, setup_episode, truth_objects, EpisodeResult,
    EpisodeSetup, EpisodeStep, TARGET_VISIBILITY,
};
pub use learner::{Adam, Learner};
pub use run::{epsilon_at, run_training, training_pile_seed, LogRow, TrainingOutcome, TRAIN_LOG_FORMAT};

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use crate::obs::{ObsError, ObservationBundle};
use crate::qnet::{greedy_action, ActionIndex, QNetwork, QnetError};
use crate::sim::{BodyId, MotionLog, SimError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error(transparent)]
    Net(#[from] QnetError),
    #[error("io: {0}")]
    Io(String),
    #[error("collector failed: {0}")]
    Worker(String),
    #[error("replay buffer has {have} transitions, batch needs {need}")]
    BufferTooSmall { have: usize, need: usize },
}

/// Negative summed net displacement of every non-target body over the log.
pub fn reward(log: &MotionLog, target: BodyId) -> f64 {
    -log.displacements()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, d)| d)
        .sum::<f64>()
}

/// Bellman target: `r` when terminal, else `r + γ · max_a Q_target(next, a)`.
pub fn td_target(r: f64, next: &ObservationBundle, terminal: bool, target: &QNetwork, gamma: f64) -> f64 {
    if terminal {
        r
    } else {
        r + gamma * max_q(target, next)
    }
}

pub fn max_q(net: &QNetwork, obs: &ObservationBundle) -> f64 {
    net.forward_all(obs).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// ε-greedy choice: uniform with probability `epsilon`, else greedy.
pub fn epsilon_greedy<R: Rng>(net: &QNetwork, obs: &ObservationBundle, epsilon: f64, rng: &mut R) -> ActionIndex {
    if rng.random::<f64>() < epsilon {
        ActionIndex::new(rng.random_range(0..crate::qnet::NUM_ACTIONS)).expect("in range")
    } else {
        greedy_action(&net.forward_all(obs))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: ObservationBundle,
    pub action: ActionIndex,
    pub reward: f64,
    pub next_obs: ObservationBundle,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
struct Stored {
    transition: Transition,
    /// `max_a Q_target(next_obs, a)` and the target version it was computed with.
    bootstrap: Option<(u64, f64)>,
}

/// Fixed-capacity FIFO of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Stored>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(Stored { transition: t, bootstrap: None });
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i).map(|s| &s.transition)
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    /// TD target of item `i`, reusing the bootstrap value while the target
    /// network version is unchanged.
    /// With `clamp`, the bootstrap is capped at 0: rewards are never
    /// positive, so neither is any true value.
    fn target_of(&mut self, i: usize, target: &QNetwork, version: u64, gamma: f64, clamp: bool) -> f64 {
        let s = &mut self.items[i];
        let t = &s.transition;
        if t.terminal {
            return t.reward;
        }
        let boot = match s.bootstrap {
            Some((v, q)) if v == version => q,
            _ => {
                let q = max_q(target, &t.next_obs);
                s.bootstrap = Some((version, q));
                q
            }
        };
        t.reward + gamma * if clamp { boot.min(0.0) } else { boot }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Pose, Vec3};
    use crate::obs::{Heightmap, PoseObservation};
    use crate::qnet::Variant;
    use crate::sim::StepRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn log_with(start: &[Vec3], end: &[Vec3]) -> MotionLog {
        let mut log = MotionLog::new(0, start.iter().map(|p| Pose::from_position(*p)).collect());
        log.records.push(StepRecord {
            time: 0.1,
            poses: end.iter().map(|p| Pose::from_position(*p)).collect(),
            speeds: vec![0.0; end.len()],
        });
        log
    }

    #[test]
    fn reward_examples() {
        let a = [Vec3::ZERO, Vec3::X, Vec3::Y];
        assert_eq!(reward(&log_with(&a, &a), 0), 0.0);
        let b = [Vec3::new(0.0, 0.0, 0.5), Vec3::X + Vec3::new(0.1, 0.0, 0.0), Vec3::Y + Vec3::new(0.0, 0.0, 0.2)];
        assert!((reward(&log_with(&a, &b), 0) + 0.3).abs() < 1e-12);
        let c = [Vec3::new(0.3, 0.0, 0.0), Vec3::X, Vec3::Y];
        assert_eq!(reward(&log_with(&a, &c), 0), 0.0);
    }

    fn obs() -> ObservationBundle {
        ObservationBundle::new(Heightmap::default(), PoseObservation::default(), &[], Pose::IDENTITY)
    }

    #[test]
    fn td_target_examples() {
        let mut net = QNetwork::new(Variant::PoseRaw, 0);
        net.zero_head();
        assert_eq!(td_target(-0.2, &obs(), true, &net, 0.99), -0.2);
        assert_eq!(td_target(-0.1, &obs(), false, &net, 0.99), -0.1);
        // constant head bias of 1.0 → max next Q = 1.0
        let l = crate::qnet::layout();
        net.params[l.head_b] = 1.0;
        assert!((td_target(-0.1, &obs(), false, &net, 0.99) - 0.89).abs() < 1e-12);
    }

    #[test]
    fn buffer_is_fifo_and_bounded() {
        let mut b = ReplayBuffer::new(3);
        for k in 0..5 {
            b.push(Transition {
                obs: obs(),
                action: ActionIndex::new(k).unwrap(),
                reward: -(k as f64),
                next_obs: obs(),
                terminal: true,
            });
            assert!(b.len() <= 3);
        }
        let kept: Vec<usize> = (0..3).map(|i| b.get(i).unwrap().action.get()).collect();
        assert_eq!(kept, vec![2, 3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let idx = b.sample_indices(3000, &mut rng);
        for i in 0..3 {
            let n = idx.iter().filter(|&&j| j == i).count();
            assert!((n as f64 - 1000.0).abs() < 100.0);
        }
    }
}
