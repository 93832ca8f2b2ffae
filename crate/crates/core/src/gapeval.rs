//! Reality-gap and robustness evaluation against a frozen pseudo-real simulator.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuator::ActuatorKind;
use crate::dynamics::DynamicsParams;
use crate::env::{EnvConfig, EpisodeTrace};
use crate::error::{Error, Result};
use crate::learner::{run_episode, Agent, EpisodeOutcome};
use crate::randomize::{RandomizationRanges, RandomizedParam};

/// Held-out parameter set standing in for the physical robot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoRealConfig {
    pub params: DynamicsParams,
    pub actuator: ActuatorKind,
}

impl Default for PseudoRealConfig {
    fn default() -> Self {
        let mut params = DynamicsParams::default();
        params.latency = 0.020;
        params.battery_voltage = 14.5;
        params.contact_friction_coefficient = 0.7;
        params.inertia_scale = 1.3;
        params.motor_strength_scale = 0.9;
        Self {
            params,
            actuator: ActuatorKind::Improved,
        }
    }
}

impl PseudoRealConfig {
    /// Pseudo-real deployment of a training environment: fixed parameters,
    /// no randomization, no pushes, latency modelled.
    pub fn env_config(&self, base: &EnvConfig) -> EnvConfig {
        let mut cfg = evaluation_env(base);
        cfg.params = self.params.clone();
        cfg.actuator = self.actuator;
        cfg.latency_model = true;
        cfg
    }

    /// Randomized fields that differ from `nominal`.
    pub fn differing_fields(&self, nominal: &DynamicsParams) -> Vec<&'static str> {
        RandomizedParam::ALL
            .into_iter()
            .filter(|p| p.get(&self.params) != p.get(nominal))
            .map(|p| p.name())
            .collect()
    }
}

/// Nominal-simulation deployment of a training environment: parameters at
/// nominal, no randomization and no pushes.
pub fn evaluation_env(base: &EnvConfig) -> EnvConfig {
    let mut cfg = base.clone();
    cfg.randomize = false;
    cfg.perturbation.enabled = false;
    cfg
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub mean: f64,
    pub std: f64,
    pub std_error: f64,
    pub returns: Vec<f64>,
    pub lengths: Vec<usize>,
    pub distances: Vec<f64>,
    /// Fraction of episodes that reached the step cap.
    pub success_rate: f64,
}

impl ReturnStats {
    pub fn from_outcomes(outcomes: &[EpisodeOutcome]) -> Self {
        let returns: Vec<f64> = outcomes.iter().map(|o| o.total_return).collect();
        let (mean, std) = mean_std(&returns);
        let n = returns.len() as f64;
        Self {
            mean,
            std,
            std_error: if n > 0.0 { std / n.sqrt() } else { 0.0 },
            lengths: outcomes.iter().map(|o| o.length).collect(),
            distances: outcomes.iter().map(|o| o.distance).collect(),
            success_rate: if n > 0.0 {
                outcomes.iter().filter(|o| !o.fell).count() as f64 / n
            } else {
                0.0
            },
            returns,
        }
    }
}

/// Population mean and standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub stats: ReturnStats,
    pub traces: Vec<EpisodeTrace>,
}

/// Seed of evaluation episode `i`.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// Runs the deterministic mean policy for `n_episodes`, in parallel, in a fixed order.
pub fn evaluate_policy(agent: &Agent, env: &EnvConfig, n_episodes: usize, seed: u64) -> Result<Evaluation> {
    evaluate_inner(agent, env, n_episodes, seed, true)
}

fn evaluate_inner(agent: &Agent, env: &EnvConfig, n_episodes: usize, seed: u64, traces: bool) -> Result<Evaluation> {
    agent.check_env(env)?;
    if n_episodes == 0 {
        return Err(Error::TooFew { needed: 1, got: 0 });
    }
    let outcomes: Vec<EpisodeOutcome> = (0..n_episodes)
        .into_par_iter()
        .map(|i| run_episode(agent, env, episode_seed(seed, i), traces))
        .collect::<Result<_>>()?;
    let stats = ReturnStats::from_outcomes(&outcomes);
    let traces = outcomes.into_iter().filter_map(|o| o.trace).collect();
    Ok(Evaluation { stats, traces })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub sim_return: ReturnStats,
    pub pseudo_real_return: ReturnStats,
    /// `sim_return.mean - pseudo_real_return.mean`.
    pub gap: f64,
    /// Pseudo-real success rate.
    pub success_rate: f64,
}

impl GapReport {
    pub fn new(sim_return: ReturnStats, pseudo_real_return: ReturnStats) -> Self {
        Self {
            gap: sim_return.mean - pseudo_real_return.mean,
            success_rate: pseudo_real_return.success_rate,
            sim_return,
            pseudo_real_return,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Matched-episode evaluation in nominal simulation and in the pseudo-real environment.
pub fn reality_gap(
    agent: &Agent,
    nominal: &EnvConfig,
    pseudo_real: &PseudoRealConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<GapReport> {
    let sim = evaluate_inner(agent, &evaluation_env(nominal), n_episodes, seed, false)?;
    let real = evaluate_inner(agent, &pseudo_real.env_config(nominal), n_episodes, seed, false)?;
    Ok(GapReport::new(sim.stats, real.stats))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter_value: f64,
    pub mean: f64,
    pub std: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub parameter: String,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["parameter_value", "mean", "std"])?;
        for p in &self.points {
            w.write_record([p.parameter_value.to_string(), p.mean.to_string(), p.std.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean).collect()
    }
}

/// Evaluates at `n_values` evenly spaced values of one parameter across its
/// range, all other parameters nominal.
pub fn parameter_sweep(
    agent: &Agent,
    base: &EnvConfig,
    parameter: &str,
    ranges: &RandomizationRanges,
    n_values: usize,
    n_episodes: usize,
    seed: u64,
) -> Result<SweepCurve> {
    let param = RandomizedParam::from_name(parameter)?;
    let nominal = evaluation_env(base);
    let points = ranges
        .get(param)
        .linspace(n_values)
        .into_iter()
        .map(|value| {
            let mut cfg = nominal.clone();
            param.set(&mut cfg.params, value);
            let stats = evaluate_inner(agent, &cfg, n_episodes, seed, false)?.stats;
            Ok(SweepPoint {
                parameter_value: value,
                mean: stats.mean,
                std: stats.std,
                std_error: stats.std_error,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepCurve {
        parameter: param.name().to_string(),
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// Mean over all test environments of the per-environment mean return.
    pub mean: f64,
    /// Standard deviation of the per-environment mean returns.
    pub std: f64,
    pub sweeps: Vec<SweepCurve>,
}

impl RobustnessReport {
    pub fn from_sweeps(sweeps: Vec<SweepCurve>) -> Self {
        let all: Vec<f64> = sweeps.iter().flat_map(|s| s.means()).collect();
        let (mean, std) = mean_std(&all);
        Self { mean, std, sweeps }
    }
}

/// Sweeps every listed parameter and aggregates all test environments.
pub fn robustness_report(
    agent: &Agent,
    base: &EnvConfig,
    parameters: &[RandomizedParam],
    ranges: &RandomizationRanges,
    n_values: usize,
    n_episodes: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    let sweeps = parameters
        .iter()
        .map(|p| parameter_sweep(agent, base, p.name(), ranges, n_values, n_episodes, seed))
        .collect::<Result<_>>()?;
    Ok(RobustnessReport::from_sweeps(sweeps))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitMetrics {
    /// m/s along the desired direction.
    pub speed: f64,
    /// Mean over control steps of `Σ |τ q̇|`, watts.
    pub avg_mech_power: f64,
    /// Net displacement along the desired direction, m.
    pub distance: f64,
}

pub fn gait_metrics(trace: &EpisodeTrace) -> Result<GaitMetrics> {
    let last = trace.rows.last().ok_or(Error::TooFew { needed: 1, got: 0 })?;
    let d = trace.desired_direction;
    let s = trace.start_position;
    let distance = (last.base_x - s[0]) * d[0] + (last.base_y - s[1]) * d[1] + (last.base_z - s[2]) * d[2];
    let duration = trace.duration();
    let avg_mech_power = trace.rows.iter().map(|r| r.mechanical_power).sum::<f64>() / trace.rows.len() as f64;
    Ok(GaitMetrics {
        speed: distance / duration,
        avg_mech_power,
        distance,
    })
}

/// Indices of the `k` highest returns, best first; ties go to the lower index.
pub fn select_top_k(returns: &[f64], k: usize) -> Result<Vec<usize>> {
    if returns.len() < k {
        return Err(Error::TooFew {
            needed: k,
            got: returns.len(),
        });
    }
    let mut idx: Vec<usize> = (0..returns.len()).collect();
    idx.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}
