use std::fmt::Write as _;
use std::path::Path;

use super::TrainError;
use crate::qnet::Variant;

/// Training hyperparameters; parsed from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub lr: f64,
    pub batch: usize,
    /// Learner updates per collected episode.
    pub replay_ratio: usize,
    pub target_sync: usize,
    pub epsilon_end_iter: usize,
    pub epsilon_final: f64,
    pub episode_steps: usize,
    pub buffer_capacity: usize,
    pub seed: u64,
    /// Total learner updates.
    pub updates: usize,
    /// Objects per training pile.
    pub objects: usize,
    /// Collector threads; 1 runs collection and learning in lockstep.
    pub workers: usize,
    pub variant: Variant,
    /// Perturb training pose observations with the ablation noise model.
    pub noise: bool,
    pub settle_time: f64,
    pub log_every: usize,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Cap bootstrapped values at 0 (all rewards are non-positive).
    pub clamp_bootstrap: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 0.001,
            batch: 128,
            replay_ratio: 16,
            target_sync: 100,
            epsilon_end_iter: 5000,
            epsilon_final: 0.02,
            episode_steps: 5,
            buffer_capacity: 50_000,
            seed: 0,
            updates: 20_000,
            objects: 4,
            workers: 1,
            variant: Variant::PoseRaw,
            noise: false,
            settle_time: 1.0,
            log_every: 100,
            checkpoint_every: 1000,
            clamp_bootstrap: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, TrainError> {
    v.parse().map_err(|_| TrainError::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, TrainError> {
    match v {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(TrainError::Config(format!("{key}: expected on/off, got {v:?}"))),
    }
}

impl TrainerConfig {
    pub const KEYS: [&'static str; 19] = [
        "gamma",
        "lr",
        "batch",
        "replay_ratio",
        "target_sync",
        "epsilon_end_iter",
        "epsilon_final",
        "episode_steps",
        "buffer_capacity",
        "seed",
        "updates",
        "objects",
        "workers",
        "variant",
        "noise",
        "settle_time",
        "log_every",
        "checkpoint_every",
        "clamp_bootstrap",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let v = value.trim();
        match key.trim() {
            "gamma" => self.gamma = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "replay_ratio" => self.replay_ratio = parse_num(key, v)?,
            "target_sync" => self.target_sync = parse_num(key, v)?,
            "epsilon_end_iter" => self.epsilon_end_iter = parse_num(key, v)?,
            "epsilon_final" => self.epsilon_final = parse_num(key, v)?,
            "episode_steps" => self.episode_steps = parse_num(key, v)?,
            "buffer_capacity" => self.buffer_capacity = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "updates" => self.updates = parse_num(key, v)?,
            "objects" => self.objects = parse_num(key, v)?,
            "workers" => self.workers = parse_num(key, v)?,
            "variant" => {
                self.variant = Variant::parse(v).ok_or_else(|| TrainError::Config(format!("unknown variant {v:?}")))?
            }
            "noise" => self.noise = parse_bool(key, v)?,
            "settle_time" => self.settle_time = parse_num(key, v)?,
            "log_every" => self.log_every = parse_num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "clamp_bootstrap" => self.clamp_bootstrap = parse_bool(key, v)?,
            other => return Err(TrainError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_final) {
            return bad("epsilon_final must be in [0, 1]");
        }
        if !(self.settle_time >= 0.0) {
            return bad("settle_time must be non-negative");
        }
        let counts = [
            ("batch", self.batch),
            ("replay_ratio", self.replay_ratio),
            ("target_sync", self.target_sync),
            ("epsilon_end_iter", self.epsilon_end_iter),
            ("episode_steps", self.episode_steps),
            ("buffer_capacity", self.buffer_capacity),
            ("objects", self.objects),
            ("workers", self.workers),
            ("log_every", self.log_every),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(TrainError::Config(format!("{k} must be positive")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "replay_ratio = {}", self.replay_ratio);
        let _ = writeln!(s, "target_sync = {}", self.target_sync);
        let _ = writeln!(s, "epsilon_end_iter = {}", self.epsilon_end_iter);
        let _ = writeln!(s, "epsilon_final = {}", self.epsilon_final);
        let _ = writeln!(s, "episode_steps = {}", self.episode_steps);
        let _ = writeln!(s, "buffer_capacity = {}", self.buffer_capacity);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "updates = {}", self.updates);
        let _ = writeln!(s, "objects = {}", self.objects);
        let _ = writeln!(s, "workers = {}", self.workers);
        let _ = writeln!(s, "variant = {}", self.variant.name());
        let _ = writeln!(s, "noise = {}", if self.noise { "on" } else { "off" });
        let _ = writeln!(s, "settle_time = {}", self.settle_time);
        let _ = writeln!(s, "log_every = {}", self.log_every);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "clamp_bootstrap = {}", if self.clamp_bootstrap { "on" } else { "off" });
        s
    }
}
