use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gae::gae;
use super::policy::{Normalization, PolicyNetwork, ValueNetwork};
use super::ppo::{ppo_update, Optimizers, PpoConfig, UpdateStats};
use super::rollout::{collect_rollouts, Agent};
use crate::env::{EnvConfig, ACTION_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Gallop,
    Trot,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Gallop => "gallop",
            Task::Trot => "trot",
        }
    }

    pub fn env_config(self) -> EnvConfig {
        match self {
            Task::Gallop => EnvConfig::gallop(),
            Task::Trot => EnvConfig::trot(),
        }
    }

    pub fn policy_hidden(self) -> (usize, usize) {
        match self {
            Task::Gallop => (185, 95),
            Task::Trot => (125, 89),
        }
    }

    pub fn value_hidden(self) -> (usize, usize) {
        match self {
            Task::Gallop => (95, 85),
            Task::Trot => (89, 55),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gallop" => Ok(Task::Gallop),
            "trot" => Ok(Task::Trot),
            _ => Err(Error::Config(format!("unknown task `{s}`; expected gallop or trot"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub max_steps: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn preset(task: Task, max_steps: usize, seed: u64) -> Self {
        Self {
            task,
            env: task.env_config(),
            ppo: PpoConfig::default(),
            max_steps,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()?;
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub env_steps: usize,
    pub mean_return: f64,
    pub std_return: f64,
}

/// Everything needed to deploy the policy or continue training bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub task: Task,
    pub policy_sizes: Vec<usize>,
    pub value_sizes: Vec<usize>,
    pub agent: Agent,
    pub config: TrainConfig,
    pub iteration: usize,
    pub env_steps: usize,
    pub rng: ChaCha8Rng,
    pub optimizers: Optimizers,
    pub curve: Vec<CurveRow>,
}

impl Checkpoint {
    /// Fresh agent for a training config, before any update.
    pub fn initial(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let obs_dim = config.env.observation_dim();
        let policy = PolicyNetwork::new(obs_dim, config.task.policy_hidden(), ACTION_DIM, &mut rng);
        let value = ValueNetwork::new(obs_dim, config.task.value_hidden(), &mut rng);
        let agent = Agent {
            policy,
            value,
            normalization: Normalization::for_env(&config.env),
        };
        Ok(Self {
            task: config.task,
            policy_sizes: agent.policy.mean.sizes.clone(),
            value_sizes: agent.value.net.sizes.clone(),
            optimizers: Optimizers::for_agent(&agent),
            agent,
            config: config.clone(),
            iteration: 0,
            env_steps: 0,
            rng,
            curve: Vec::new(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.env_steps >= self.config.max_steps
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        ck.agent.policy.mean.validate()?;
        ck.agent.value.net.validate()?;
        if ck.agent.policy.log_std.len() != ck.agent.policy.action_dim() {
            return Err(Error::Dimension {
                expected: ck.agent.policy.action_dim(),
                got: ck.agent.policy.log_std.len(),
            });
        }
        Ok(ck)
    }
}

pub fn write_learning_curve(curve: &[CurveRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in curve {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CURVE_FILE: &str = "learning_curve.csv";

/// One collect / advantage / update cycle.
pub fn train_iteration(ck: &mut Checkpoint) -> Result<(CurveRow, UpdateStats)> {
    let cfg = &ck.config;
    let iter_seed = ck.rng.next_u64();
    let batch = collect_rollouts(&ck.agent, &cfg.env, cfg.ppo.n_workers, cfg.ppo.horizon, iter_seed)?;
    let (advantages, returns) = gae(
        &batch.rewards,
        &batch.values,
        &batch.dones,
        cfg.ppo.gamma,
        cfg.ppo.lambda,
    );
    let progress = ck.env_steps as f64 / cfg.max_steps as f64;
    let lr = if cfg.ppo.lr_decay {
        cfg.ppo.learning_rate * (1.0 - progress).max(0.0)
    } else {
        cfg.ppo.learning_rate
    };
    let stats = ppo_update(
        &mut ck.agent,
        &mut ck.optimizers,
        &batch,
        &advantages,
        &returns,
        &cfg.ppo,
        lr,
        iter_seed.rotate_left(17) ^ 0x5851_f42d_4c95_7f2d,
    )?;
    ck.iteration += 1;
    ck.env_steps += batch.len();
    let (mean_return, std_return) = mean_std(&batch.episode_returns);
    let row = CurveRow {
        iteration: ck.iteration,
        env_steps: ck.env_steps,
        mean_return,
        std_return,
    };
    ck.curve.push(row.clone());
    Ok((row, stats))
}

/// Continues training until `max_steps`, saving the checkpoint and curve
/// into `out_dir` after every iteration.
pub fn resume(
    mut ck: Checkpoint,
    out_dir: Option<&Path>,
    mut on_iteration: impl FnMut(&CurveRow, &UpdateStats),
) -> Result<Checkpoint> {
    ck.config.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    while !ck.is_finished() {
        let (row, stats) = train_iteration(&mut ck)?;
        on_iteration(&row, &stats);
        if let Some(dir) = out_dir {
            ck.save(&dir.join(CHECKPOINT_FILE))?;
            write_learning_curve(&ck.curve, &dir.join(CURVE_FILE))?;
        }
    }
    Ok(ck)
}

/// Trains from scratch; returns the final checkpoint, whose `curve` is the learning curve.
pub fn train(config: &TrainConfig, out_dir: Option<&Path>) -> Result<Checkpoint> {
    resume(Checkpoint::initial(config)?, out_dir, |_, _| {})
}
