use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpGrad};
use crate::env::{action_to_motor_targets, compose_action, EnvConfig, ObservationSpace, ACTION_DIM};
use crate::error::{Error, Result};
use crate::sensing::IMU_CHANNELS;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian policy: tanh MLP mean and a state-independent log standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyNetwork {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueNetwork {
    pub net: Mlp,
}

impl PolicyNetwork {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: (usize, usize), action_dim: usize, rng: &mut R) -> Self {
        Self {
            mean: Mlp::orthogonal(&[obs_dim, hidden.0, hidden.1, action_dim], 0.01, rng),
            log_std: vec![0.5f64.ln(); action_dim],
        }
    }

    pub fn zeros(obs_dim: usize, hidden: (usize, usize), action_dim: usize) -> Self {
        Self {
            mean: Mlp::zeros(&[obs_dim, hidden.0, hidden.1, action_dim]),
            log_std: vec![0.0; action_dim],
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mean.output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.mean.num_params() + self.log_std.len()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.mean.flat_params();
        p.extend(&self.log_std);
        p
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.mean.num_params();
        if flat.len() != n + self.log_std.len() {
            return Err(Error::Dimension {
                expected: n + self.log_std.len(),
                got: flat.len(),
            });
        }
        self.mean.set_flat_params(&flat[..n])?;
        self.log_std.copy_from_slice(&flat[n..]);
        Ok(())
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    /// Samples an action and returns it with its log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, l)| m + l.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lp = gaussian_log_prob(&action, mean, &self.log_std);
        (action, lp)
    }
}

/// Mean and standard deviation for one observation.
pub fn policy_forward(net: &PolicyNetwork, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((net.mean.forward(obs)?, net.std()))
}

impl ValueNetwork {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: (usize, usize), rng: &mut R) -> Self {
        Self {
            net: Mlp::orthogonal(&[obs_dim, hidden.0, hidden.1, 1], 1.0, rng),
        }
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.net.forward(obs)?[0])
    }

    pub fn values(&self, obs: &Array2<f64>) -> Result<Vec<f64>> {
        let (v, _) = self.net.forward_batch(obs)?;
        Ok(v.column(0).to_vec())
    }

    /// `½ mean (V - target)²` and its parameter gradient.
    pub fn loss_and_grad(&self, obs: &Array2<f64>, targets: &[f64]) -> Result<(f64, MlpGrad)> {
        let (v, cache) = self.net.forward_batch(obs)?;
        let n = targets.len() as f64;
        let mut d = Array2::zeros(v.raw_dim());
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let e = v[(i, 0)] - t;
            loss += 0.5 * e * e / n;
            d[(i, 0)] = e / n;
        }
        Ok((loss, self.net.backward(&cache, &d)))
    }
}

pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), l)| {
            let z = (a - m) / l.exp();
            -0.5 * z * z - l - 0.5 * LOG_2PI
        })
        .sum()
}

/// Batched log-probabilities plus what the backward pass needs.
pub struct LogProbBatch {
    pub log_probs: Vec<f64>,
    pub means: Array2<f64>,
    cache: super::mlp::MlpCache,
}

impl PolicyNetwork {
    pub fn log_probs(&self, obs: &Array2<f64>, actions: &Array2<f64>) -> Result<LogProbBatch> {
        if actions.ncols() != self.action_dim() {
            return Err(Error::Dimension {
                expected: self.action_dim(),
                got: actions.ncols(),
            });
        }
        let (means, cache) = self.mean.forward_batch(obs)?;
        let log_probs = means
            .axis_iter(Axis(0))
            .zip(actions.axis_iter(Axis(0)))
            .map(|(m, a)| gaussian_log_prob(a.as_slice().unwrap(), m.as_slice().unwrap(), &self.log_std))
            .collect();
        Ok(LogProbBatch {
            log_probs,
            means,
            cache,
        })
    }

    /// Flat gradient of `Σ_i coef_i · log π(a_i | o_i)`.
    pub fn log_prob_grad(&self, batch: &LogProbBatch, actions: &Array2<f64>, coef: &[f64]) -> Vec<f64> {
        let inv_var: Array1<f64> = self.log_std.iter().map(|l| (-2.0 * l).exp()).collect();
        let mut d_mean = Array2::zeros(batch.means.raw_dim());
        let mut d_log_std = vec![0.0; self.log_std.len()];
        for (i, &c) in coef.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for j in 0..self.log_std.len() {
                let diff = actions[(i, j)] - batch.means[(i, j)];
                d_mean[(i, j)] = c * diff * inv_var[j];
                d_log_std[j] += c * (diff * diff * inv_var[j] - 1.0);
            }
        }
        let mut g = self.mean.backward(&batch.cache, &d_mean).flat();
        g.extend(d_log_std);
        g
    }
}

/// Maps environment observations into network inputs and network outputs
/// into feedback actions in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub obs_offset: Vec<f64>,
    pub obs_scale: Vec<f64>,
    pub action_offset: Vec<f64>,
    pub action_scale: Vec<f64>,
}

impl Normalization {
    /// Actions centred on the feedback bounds; motor-angle observations
    /// centred on the reset pose.
    pub fn for_env(config: &EnvConfig) -> Self {
        let action_offset: Vec<f64> = (0..ACTION_DIM).map(|i| config.feedback_bounds(i).center()).collect();
        let action_scale = (0..ACTION_DIM)
            .map(|i| config.feedback_bounds(i).half_width())
            .collect();
        let mut obs_offset = vec![0.0; IMU_CHANNELS];
        if config.observation_space == ObservationSpace::Large {
            let center: [f64; ACTION_DIM] = std::array::from_fn(|i| action_offset[i]);
            obs_offset.extend(action_to_motor_targets(&compose_action(0.0, &center, config)));
        }
        let obs_scale = vec![1.0; obs_offset.len()];
        Self {
            obs_offset,
            obs_scale,
            action_offset,
            action_scale,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_offset.len()
    }

    pub fn observation(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(&self.obs_offset)
            .zip(&self.obs_scale)
            .map(|((o, off), s)| (o - off) / s)
            .collect()
    }

    pub fn feedback(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(&self.action_offset)
            .zip(&self.action_scale)
            .map(|((a, off), s)| off + s * a)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_policy_outputs() {
        let net = PolicyNetwork::zeros(4, (5, 3), 8);
        let (m, s) = policy_forward(&net, &[0.3, -0.1, 2.0, 0.0]).unwrap();
        assert_eq!(m, vec![0.0; 8]);
        assert_eq!(s, vec![1.0; 8]);
    }

    #[test]
    fn normalization_centres_trot() {
        let n = Normalization::for_env(&EnvConfig::trot());
        assert_eq!(n.obs_dim(), 4);
        assert_eq!(n.feedback(&[1.0; 8])[0], 0.25);
        assert_eq!(n.feedback(&[0.0; 8]), vec![0.0; 8]);
        let g = Normalization::for_env(&EnvConfig::gallop());
        assert_eq!(g.obs_dim(), 12);
        assert!((g.feedback(&[0.0; 8])[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}
