use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ReplayBuffer, TrainError, TrainerConfig};
use crate::qnet::{QNetwork, QnetError};

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Live network, its lagged target copy, and the optimizer state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub live: QNetwork,
    pub target: QNetwork,
    pub adam: Adam,
    pub updates: usize,
    /// Incremented every time the target network is refreshed.
    pub target_version: u64,
    gamma: f64,
    batch: usize,
    target_sync: usize,
    clamp: bool,
    rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(net: QNetwork, config: &TrainerConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Self {
            target: net.clone(),
            adam: Adam::new(net.params.len(), config.lr),
            live: net,
            updates: 0,
            target_version: 0,
            gamma: config.gamma,
            batch: config.batch,
            target_sync: config.target_sync,
            clamp: config.clamp_bootstrap,
            rng,
        }
    }

    /// One minibatch update. Returns the batch's mean L1 loss before the step.
    pub fn train_step(&mut self, buffer: &mut ReplayBuffer) -> Result<f64, TrainError> {
        if buffer.len() < self.batch {
            return Err(TrainError::BufferTooSmall { have: buffer.len(), need: self.batch });
        }
        let idx = buffer.sample_indices(self.batch, &mut self.rng);
        let targets: Vec<f64> =
            idx.iter().map(|&i| buffer.target_of(i, &self.target, self.target_version, self.gamma, self.clamp)).collect();
        let batch: Vec<_> = idx
            .iter()
            .zip(&targets)
            .map(|(&i, &y)| {
                let t = buffer.get(i).expect("sampled index");
                (&t.obs, t.action, y)
            })
            .collect();
        let (loss, grad) = self.live.loss_and_grad(&batch).map_err(|e| match e {
            QnetError::NonFinite(what) => {
                TrainError::Net(QnetError::NonFinite(format!("{what} at update {}", self.updates)))
            }
            other => TrainError::Net(other),
        })?;
        self.adam.step(&mut self.live.params, &grad);
        self.updates += 1;
        if self.updates % self.target_sync == 0 {
            self.target.params.copy_from_slice(&self.live.params);
            self.target_version += 1;
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Pose, Vec3};
    use crate::obs::{Heightmap, ObjectToken, ObservationBundle, PoseObservation};
    use crate::qnet::{ActionIndex, Variant};
    use crate::train::Transition;

    fn obs(z: f64) -> ObservationBundle {
        let hm = Heightmap::from_points(&[Vec3::new(0.01, 0.0, z)], &Pose::IDENTITY);
        let po = PoseObservation {
            objects: vec![ObjectToken { target: true, category: 1, pose: Pose::from_position(Vec3::new(0.0, 0.0, z)) }],
        };
        ObservationBundle::new(hm, po, &[Pose::IDENTITY], Pose::IDENTITY)
    }

    fn config(batch: usize) -> TrainerConfig {
        TrainerConfig { batch, target_sync: 7, ..Default::default() }
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut a = Adam::new(2, 0.1);
        let mut p = [1.0, 1.0];
        a.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-8 && (p[1] - 1.1).abs() < 1e-8);
        let mut q = [1.0];
        Adam::new(1, 0.1).step(&mut q, &[0.0]);
        assert_eq!(q[0], 1.0);
    }

    #[test]
    fn exact_targets_leave_params_unchanged() {
        let mut net = QNetwork::new(Variant::PoseRaw, 1);
        net.zero_head();
        let mut l = Learner::new(net.clone(), &config(4));
        let mut buf = ReplayBuffer::new(10);
        for _ in 0..4 {
            buf.push(Transition { obs: obs(0.1), action: ActionIndex::new(3).unwrap(), reward: 0.0, next_obs: obs(0.1), terminal: true });
        }
        assert_eq!(l.train_step(&mut buf).unwrap(), 0.0);
        assert_eq!(l.live.params, net.params);
    }

    #[test]
    fn overfits_one_transition() {
        let net = QNetwork::new(Variant::PoseRaw, 2);
        let mut l = Learner::new(net, &TrainerConfig { batch: 1, ..Default::default() });
        let mut buf = ReplayBuffer::new(1);
        buf.push(Transition { obs: obs(0.05), action: ActionIndex::new(100).unwrap(), reward: -50.0, next_obs: obs(0.05), terminal: true });
        // far enough away that 200 steps cannot reach it and start oscillating
        let losses: Vec<f64> = (0..200).map(|_| l.train_step(&mut buf).unwrap()).collect();
        for i in 20..190 {
            assert!(losses[i + 10] <= losses[i], "step {i}: {} -> {}", losses[i], losses[i + 10]);
        }
        assert!(losses[199] < 0.75 * losses[0], "{} -> {}", losses[0], losses[199]);
    }

    #[test]
    fn target_syncs_only_on_schedule() {
        let net = QNetwork::new(Variant::RawOnly, 3);
        let mut l = Learner::new(net, &config(2));
        let mut buf = ReplayBuffer::new(10);
        for k in 0..4 {
            buf.push(Transition {
                obs: obs(0.02 * k as f64),
                action: ActionIndex::new(50 * k).unwrap(),
                reward: -0.1,
                next_obs: obs(0.1),
                terminal: k % 2 == 0,
            });
        }
        let mut prev = l.target.params.clone();
        for u in 1..=21 {
            l.train_step(&mut buf).unwrap();
            let changed = l.target.params != prev;
            assert_eq!(changed, u % 7 == 0, "update {u}");
            if changed {
                assert_eq!(l.target.params, l.live.params);
            }
            prev = l.target.params.clone();
        }
        assert_eq!(l.target_version, 3);
    }
}
