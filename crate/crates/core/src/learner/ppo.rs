use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::PolicyNetwork;
use super::rollout::{Agent, RolloutBatch};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_epsilon: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    /// Anneal the learning rate linearly to zero over the run.
    pub lr_decay: bool,
    pub max_grad_norm: f64,
    pub entropy_coef: f64,
    pub n_workers: usize,
    pub horizon: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_epsilon: 0.2,
            epochs: 10,
            minibatch_size: 256,
            learning_rate: 3e-4,
            lr_decay: true,
            max_grad_norm: 0.5,
            entropy_coef: 0.0,
            n_workers: 25,
            horizon: 1000,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("gamma and lambda must lie in [0, 1]".into()));
        }
        if !(self.clip_epsilon >= 0.0) {
            return Err(Error::Config("clip_epsilon must be non-negative".into()));
        }
        if self.minibatch_size == 0 || self.n_workers == 0 || self.horizon == 0 {
            return Err(Error::Config(
                "minibatch_size, n_workers and horizon must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One descent step on `params`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub policy: Adam,
    pub value: Adam,
}

impl Optimizers {
    pub fn for_agent(agent: &Agent) -> Self {
        Self {
            policy: Adam::new(agent.policy.num_params()),
            value: Adam::new(agent.value.net.num_params()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Largest |ratio - 1| in the first minibatch of the first epoch.
    pub first_ratio_deviation: f64,
}

/// Clipped-surrogate loss on one minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateEval {
    /// `-mean(min(r A, clip(r) A))` minus the entropy bonus.
    pub loss: f64,
    pub grad: Vec<f64>,
    pub ratios: Vec<f64>,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

pub fn surrogate_loss_and_grad(
    policy: &PolicyNetwork,
    obs: &Array2<f64>,
    actions: &Array2<f64>,
    old_log_probs: &[f64],
    advantages: &[f64],
    clip_epsilon: f64,
    entropy_coef: f64,
) -> Result<SurrogateEval> {
    let batch = policy.log_probs(obs, actions)?;
    let n = advantages.len() as f64;
    let mut loss = 0.0;
    let mut kl = 0.0;
    let mut clipped = 0usize;
    let mut coef = vec![0.0; advantages.len()];
    let mut ratios = Vec::with_capacity(advantages.len());
    for i in 0..advantages.len() {
        let log_ratio = batch.log_probs[i] - old_log_probs[i];
        let r = log_ratio.exp();
        let a = advantages[i];
        let unclipped = r * a;
        let bounded = r.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon) * a;
        let inside = r > 1.0 - clip_epsilon && r < 1.0 + clip_epsilon;
        if unclipped < bounded || inside {
            coef[i] = -a * r / n;
        } else {
            clipped += 1;
        }
        loss -= unclipped.min(bounded) / n;
        kl += ((r - 1.0) - log_ratio) / n;
        ratios.push(r);
    }
    let mut grad = policy.log_prob_grad(&batch, actions, &coef);
    if entropy_coef != 0.0 {
        let k = policy.log_std.len();
        let offset = grad.len() - k;
        for j in 0..k {
            loss -= entropy_coef * policy.log_std[j];
            grad[offset + j] -= entropy_coef;
        }
    }
    Ok(SurrogateEval {
        loss,
        grad,
        ratios,
        approx_kl: kl,
        clip_fraction: clipped as f64 / n,
    })
}

fn clip_norm(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Mean 0, std 1 (unchanged if the spread is zero).
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Clipped-surrogate policy ascent plus value regression over shuffled minibatches.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    agent: &mut Agent,
    optimizers: &mut Optimizers,
    batch: &RolloutBatch,
    advantages: &[f64],
    returns: &[f64],
    config: &PpoConfig,
    learning_rate: f64,
    seed: u64,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::TooFew { needed: 1, got: 0 });
    }
    let n = batch.len();
    let advantages = normalize_advantages(advantages);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut count = 0.0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (mb, idx) in order.chunks(config.minibatch_size).enumerate() {
            let obs = batch.obs.select(Axis(0), idx);
            let actions = batch.actions.select(Axis(0), idx);
            let old: Vec<f64> = idx.iter().map(|&i| batch.log_probs[i]).collect();
            let adv: Vec<f64> = idx.iter().map(|&i| advantages[i]).collect();
            let ret: Vec<f64> = idx.iter().map(|&i| returns[i]).collect();

            let mut s = surrogate_loss_and_grad(
                &agent.policy,
                &obs,
                &actions,
                &old,
                &adv,
                config.clip_epsilon,
                config.entropy_coef,
            )?;
            let (v_loss, v_grad) = agent.value.loss_and_grad(&obs, &ret)?;
            let mut v_grad = v_grad.flat();
            if !s.loss.is_finite() || !v_loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "epoch {epoch}, minibatch {mb}: surrogate {} value {}",
                    s.loss, v_loss
                )));
            }
            if epoch == 0 && mb == 0 {
                stats.first_ratio_deviation = s.ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
            }

            clip_norm(&mut s.grad, config.max_grad_norm);
            clip_norm(&mut v_grad, config.max_grad_norm);
            let mut p = agent.policy.flat_params();
            optimizers.policy.step(&mut p, &s.grad, learning_rate);
            agent.policy.set_flat_params(&p)?;
            let mut p = agent.value.net.flat_params();
            optimizers.value.step(&mut p, &v_grad, learning_rate);
            agent.value.net.set_flat_params(&p)?;

            stats.surrogate_loss += s.loss;
            stats.value_loss += v_loss;
            count += 1.0;
            if epoch + 1 == config.epochs {
                stats.approx_kl += s.approx_kl * idx.len() as f64 / n as f64;
                stats.clip_fraction += s.clip_fraction * idx.len() as f64 / n as f64;
            }
        }
    }
    if count > 0.0 {
        stats.surrogate_loss /= count;
        stats.value_loss /= count;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_moves_against_gradient() {
        let mut adam = Adam::new(2);
        let mut p = [1.0, -1.0];
        adam.step(&mut p, &[0.5, -2.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn normalized_advantages() {
        let a = normalize_advantages(&[1.0, 2.0, 3.0, 6.0]);
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let var: f64 = a.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
