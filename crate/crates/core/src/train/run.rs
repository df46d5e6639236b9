use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::env::{noisy_objects, run_episode, setup_episode, truth_objects, EpisodeResult};
use super::{epsilon_greedy, Learner, ReplayBuffer, TrainError, TrainerConfig};
use crate::obs::{build_pose_obs, Heightmap, ObsError};
use crate::percept::NoiseParams;
use crate::qnet::{save_checkpoint, QNetwork};
use crate::sim::{BodyShape, SimError};

pub const TRAIN_LOG_FORMAT: &str = "# pilepick-train-log v1";

/// Linear decay from 1 to `epsilon_final` over `epsilon_end_iter` updates.
pub fn epsilon_at(updates: usize, config: &TrainerConfig) -> f64 {
    if updates >= config.epsilon_end_iter {
        return config.epsilon_final;
    }
    1.0 - (1.0 - config.epsilon_final) * updates as f64 / config.epsilon_end_iter as f64
}

/// Pile seed of training episode `episode`. The top bit is always set, so
/// small benchmark seeds never coincide with training piles.
pub fn training_pile_seed(run_seed: u64, episode: u64) -> u64 {
    let mut z = run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ episode.wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) | (1 << 63)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub update: usize,
    /// Mean minibatch loss since the previous row.
    pub loss: f64,
    pub epsilon: f64,
    pub episodes: usize,
    /// Mean episode penalty (summed non-target translation) since the previous row.
    pub mean_penalty: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub network: QNetwork,
    /// Loss of every update, in order.
    pub losses: Vec<f64>,
    pub rows: Vec<LogRow>,
    pub episodes: usize,
    /// Piles skipped because no target was usable or the simulation diverged.
    pub skipped: usize,
}

/// Collects one ε-greedy episode on training pile `index`; `None` if the
/// pile is unusable.
fn collect(
    config: &TrainerConfig,
    catalog: &[BodyShape],
    net: &QNetwork,
    epsilon: f64,
    index: u64,
) -> Result<Option<EpisodeResult>, TrainError> {
    let seed = training_pile_seed(config.seed, index);
    let setup = match setup_episode(catalog, config.objects, seed) {
        Ok(s) => s,
        Err(TrainError::Obs(ObsError::TargetNotVisible))
        | Err(TrainError::Sim(SimError::PileGeneration(_)))
        | Err(TrainError::Sim(SimError::Diverged { .. })) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut scene = setup.scene;
    let objects = if config.noise {
        noisy_objects(&scene, setup.target, &setup.visibility, &NoiseParams::ablation(config.seed), index)
    } else {
        truth_objects(&scene, setup.target)
    };
    let heightmap = Heightmap::from_scene(&scene, &setup.grasp);
    let pose_obs = build_pose_obs(&objects, &setup.grasp);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let result = run_episode(
        &mut scene,
        setup.target,
        setup.grasp,
        heightmap,
        pose_obs,
        config.episode_steps,
        config.settle_time,
        |o| epsilon_greedy(net, o, epsilon, &mut rng),
    );
    match result {
        Ok(r) => Ok(Some(r)),
        Err(TrainError::Sim(SimError::Diverged { .. })) => Ok(None),
        Err(e) => Err(e),
    }
}

struct LearnerLoop<'a> {
    config: &'a TrainerConfig,
    learner: Learner,
    buffer: ReplayBuffer,
    losses: Vec<f64>,
    rows: Vec<LogRow>,
    episodes: usize,
    skipped: usize,
    window_loss: (f64, usize),
    window_penalty: (f64, usize),
    csv: Option<std::io::BufWriter<std::fs::File>>,
    out_dir: Option<PathBuf>,
}

fn io_err(e: impl std::fmt::Display) -> TrainError {
    TrainError::Io(e.to_string())
}

impl<'a> LearnerLoop<'a> {
    fn new(config: &'a TrainerConfig, out_dir: Option<&Path>) -> Result<Self, TrainError> {
        let csv = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(io_err)?;
                std::fs::write(dir.join("config.txt"), config.to_text()).map_err(io_err)?;
                let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("train_log.csv")).map_err(io_err)?);
                writeln!(f, "{TRAIN_LOG_FORMAT}").map_err(io_err)?;
                writeln!(f, "update,loss,epsilon,episodes,mean_penalty").map_err(io_err)?;
                Some(f)
            }
            None => None,
        };
        Ok(Self {
            config,
            learner: Learner::new(QNetwork::new(config.variant, config.seed), config),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            losses: Vec::new(),
            rows: Vec::new(),
            episodes: 0,
            skipped: 0,
            window_loss: (0.0, 0),
            window_penalty: (0.0, 0),
            csv,
            out_dir: out_dir.map(Path::to_path_buf),
        })
    }

    fn done(&self) -> bool {
        self.learner.updates >= self.config.updates
    }

    fn checkpoint(&self, name: &str) -> Result<(), TrainError> {
        if let Some(dir) = &self.out_dir {
            save_checkpoint(&self.learner.live, &dir.join(name))?;
        }
        Ok(())
    }

    fn on_episode(&mut self, episode: Option<EpisodeResult>) -> Result<(), TrainError> {
        let Some(ep) = episode else {
            self.skipped += 1;
            return Ok(());
        };
        self.episodes += 1;
        self.window_penalty.0 -= ep.total_reward();
        self.window_penalty.1 += 1;
        for t in ep.transitions() {
            self.buffer.push(t);
        }
        if self.buffer.len() < self.config.batch {
            return Ok(());
        }
        for _ in 0..self.config.replay_ratio {
            if self.done() {
                break;
            }
            let loss = match self.learner.train_step(&mut self.buffer) {
                Ok(l) => l,
                Err(e) => {
                    self.checkpoint("partial.ckpt")?;
                    return Err(e);
                }
            };
            self.losses.push(loss);
            self.window_loss.0 += loss;
            self.window_loss.1 += 1;
            let u = self.learner.updates;
            if u % self.config.log_every == 0 {
                self.log_row()?;
            }
            if self.config.checkpoint_every > 0 && u % self.config.checkpoint_every == 0 {
                self.checkpoint(&format!("checkpoint_{u:06}.ckpt"))?;
            }
        }
        Ok(())
    }

    fn log_row(&mut self) -> Result<(), TrainError> {
        let mean = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };
        let row = LogRow {
            update: self.learner.updates,
            loss: mean(self.window_loss),
            epsilon: epsilon_at(self.learner.updates, self.config),
            episodes: self.episodes,
            mean_penalty: mean(self.window_penalty),
        };
        if let Some(f) = self.csv.as_mut() {
            writeln!(f, "{},{},{},{},{}", row.update, row.loss, row.epsilon, row.episodes, row.mean_penalty)
                .map_err(io_err)?;
            f.flush().map_err(io_err)?;
        }
        self.rows.push(row);
        self.window_loss = (0.0, 0);
        self.window_penalty = (0.0, 0);
        Ok(())
    }

    fn finish(mut self) -> Result<TrainingOutcome, TrainError> {
        if self.window_loss.1 > 0 {
            self.log_row()?;
        }
        self.checkpoint("final.ckpt")?;
        Ok(TrainingOutcome {
            network: self.learner.live,
            losses: self.losses,
            rows: self.rows,
            episodes: self.episodes,
            skipped: self.skipped,
        })
    }
}

/// Trains a Q-network. With one worker, collection and learning alternate in
/// lockstep and the run is bit-reproducible; with more, collector threads
/// feed the learner through a bounded queue and pick up the latest
/// published parameters before each episode.
pub fn run_training(
    config: &TrainerConfig,
    catalog: &[BodyShape],
    out_dir: Option<&Path>,
) -> Result<TrainingOutcome, TrainError> {
    config.validate()?;
    let mut lp = LearnerLoop::new(config, out_dir)?;
    if config.workers == 1 {
        let mut index = 0u64;
        while !lp.done() {
            let eps = epsilon_at(lp.learner.updates, config);
            let ep = collect(config, catalog, &lp.learner.target, eps, index)?;
            lp.on_episode(ep)?;
            index += 1;
        }
        return lp.finish();
    }

    let snapshot = RwLock::new(Arc::new(lp.learner.target.clone()));
    let updates = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let k = config.workers as u64;
    let (tx, rx) = crossbeam_channel::bounded(2 * config.workers);
    let result = std::thread::scope(|s| {
        for w in 0..k {
            let tx = tx.clone();
            let (snapshot, updates, stop) = (&snapshot, &updates, &stop);
            s.spawn(move || {
                let mut n = 0u64;
                while !stop.load(Ordering::Relaxed) {
                    let net = snapshot.read().expect("snapshot lock").clone();
                    let eps = epsilon_at(updates.load(Ordering::Relaxed), config);
                    let r = collect(config, catalog, &net, eps, w + n * k);
                    if tx.send(r).is_err() {
                        break;
                    }
                    n += 1;
                }
            });
        }
        drop(tx);
        let mut published = lp.learner.target_version;
        let outcome = loop {
            if lp.done() {
                break Ok(());
            }
            match rx.recv() {
                Ok(Ok(ep)) => {
                    if let Err(e) = lp.on_episode(ep) {
                        break Err(e);
                    }
                    updates.store(lp.learner.updates, Ordering::Relaxed);
                    if lp.learner.target_version != published {
                        published = lp.learner.target_version;
                        *snapshot.write().expect("snapshot lock") = Arc::new(lp.learner.target.clone());
                    }
                }
                Ok(Err(e)) => {
                    let _ = lp.checkpoint("partial.ckpt");
                    break Err(TrainError::Worker(e.to_string()));
                }
                Err(_) => break Err(TrainError::Worker("all collectors exited".into())),
            }
        };
        stop.store(true, Ordering::Relaxed);
        drop(rx);
        outcome
    });
    result?;
    lp.finish()
}
