use std::hash::{DefaultHasher, Hasher};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{Normalization, PolicyNetwork, ValueNetwork};
use crate::env::{reset, EnvConfig, EpisodeTrace};
use crate::error::{Error, Result};

/// Policy, critic and the normalization that connects them to an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub policy: PolicyNetwork,
    pub value: ValueNetwork,
    pub normalization: Normalization,
}

impl Agent {
    pub fn check_env(&self, config: &EnvConfig) -> Result<()> {
        let dim = config.observation_dim();
        if dim != self.policy.obs_dim() || dim != self.normalization.obs_dim() {
            return Err(Error::Dimension {
                expected: self.policy.obs_dim(),
                got: dim,
            });
        }
        Ok(())
    }
}

/// Flat experience from all workers, in worker order.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    /// Normalized observations.
    pub obs: Array2<f64>,
    /// Normalized (pre-scaling) actions.
    pub actions: Array2<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub episode_returns: Vec<f64>,
    pub episode_lengths: Vec<usize>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Hash over every stored bit.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in self
            .obs
            .iter()
            .chain(self.actions.iter())
            .chain(&self.log_probs)
            .chain(&self.rewards)
            .chain(&self.values)
        {
            h.write_u64(v.to_bits());
        }
        for &d in &self.dones {
            h.write_u8(d as u8);
        }
        h.finish()
    }
}

struct WorkerOutput {
    obs: Vec<f64>,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    episode_return: f64,
}

/// Seed of worker `index` for a collection seeded with `seed`.
pub fn worker_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

fn run_worker(agent: &Agent, config: &EnvConfig, horizon: usize, seed: u64, worker: usize) -> Result<WorkerOutput> {
    let obs_dim = agent.policy.obs_dim();
    let act_dim = agent.policy.action_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (mut env, first) = reset(config, seed)?;
    let mut out = WorkerOutput {
        obs: Vec::with_capacity(horizon * obs_dim),
        actions: Vec::with_capacity(horizon * act_dim),
        log_probs: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        values: Vec::with_capacity(horizon),
        dones: Vec::with_capacity(horizon),
        episode_return: 0.0,
    };
    let mut obs = agent.normalization.observation(&first);
    for t in 0..horizon {
        let mean = agent.policy.mean.forward(&obs)?;
        let value = agent.value.value(&obs)?;
        let (action, log_prob) = agent.policy.sample(&mean, &mut rng);
        let feedback = agent.normalization.feedback(&action);
        let step = env.step(&feedback).map_err(|e| Error::Worker {
            worker,
            step: t,
            source: Box::new(e),
        })?;
        let done = step.done || t + 1 == horizon;
        out.obs.extend(&obs);
        out.actions.extend(&action);
        out.log_probs.push(log_prob);
        out.rewards.push(step.reward);
        out.values.push(value);
        out.dones.push(done);
        out.episode_return += step.reward;
        if done {
            break;
        }
        obs = agent.normalization.observation(&step.observation);
    }
    Ok(out)
}

/// One episode per worker, run in parallel and concatenated in worker order.
pub fn collect_rollouts(
    agent: &Agent,
    config: &EnvConfig,
    n_workers: usize,
    horizon: usize,
    seed: u64,
) -> Result<RolloutBatch> {
    agent.check_env(config)?;
    if n_workers == 0 || horizon == 0 {
        return Err(Error::Config("rollouts need at least one worker and one step".into()));
    }
    let outputs: Vec<Result<WorkerOutput>> = (0..n_workers)
        .into_par_iter()
        .map(|w| run_worker(agent, config, horizon, worker_seed(seed, w), w))
        .collect();
    let obs_dim = agent.policy.obs_dim();
    let act_dim = agent.policy.action_dim();
    let mut obs = Vec::new();
    let mut actions = Vec::new();
    let mut batch = RolloutBatch {
        obs: Array2::zeros((0, obs_dim)),
        actions: Array2::zeros((0, act_dim)),
        log_probs: Vec::new(),
        rewards: Vec::new(),
        values: Vec::new(),
        dones: Vec::new(),
        episode_returns: Vec::new(),
        episode_lengths: Vec::new(),
    };
    for out in outputs {
        let out = out?;
        obs.extend(out.obs);
        actions.extend(out.actions);
        batch.episode_lengths.push(out.rewards.len());
        batch.episode_returns.push(out.episode_return);
        batch.log_probs.extend(out.log_probs);
        batch.rewards.extend(out.rewards);
        batch.values.extend(out.values);
        batch.dones.extend(out.dones);
    }
    let n = batch.rewards.len();
    batch.obs = Array2::from_shape_vec((n, obs_dim), obs).expect("observation rows");
    batch.actions = Array2::from_shape_vec((n, act_dim), actions).expect("action rows");
    Ok(batch)
}

/// Outcome of a single evaluation episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub total_return: f64,
    pub length: usize,
    /// Net base displacement along the desired direction, m.
    pub distance: f64,
    pub fell: bool,
    pub trace: Option<EpisodeTrace>,
}

/// Runs the deterministic mean policy for one episode.
pub fn run_episode(agent: &Agent, config: &EnvConfig, seed: u64, record_trace: bool) -> Result<EpisodeOutcome> {
    agent.check_env(config)?;
    let (mut env, first) = reset(config, seed)?;
    if record_trace {
        env.record_trace();
    }
    let start = env.state().base_position;
    let mut obs = agent.normalization.observation(&first);
    let mut total = 0.0;
    loop {
        let mean = agent.policy.mean.forward(&obs)?;
        let step = env.step(&agent.normalization.feedback(&mean))?;
        total += step.reward;
        if step.done {
            break;
        }
        obs = agent.normalization.observation(&step.observation);
    }
    let d = nalgebra::Vector3::from(config.desired_direction);
    let distance = (env.state().base_position - start).dot(&d);
    let length = env.step_count();
    Ok(EpisodeOutcome {
        total_return: total,
        length,
        distance,
        fell: length < config.episode_cap,
        trace: env.take_trace(),
    })
}
