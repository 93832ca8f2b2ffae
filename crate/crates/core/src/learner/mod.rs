//! PPO with a clipped surrogate, GAE, tanh MLP policy and value networks,
//! and deterministic parallel rollout collection.

pub mod gae;
pub mod mlp;
pub mod policy;
pub mod ppo;
pub mod rollout;
pub mod train;

pub use gae::{gae, gae_with_bootstrap};
pub use mlp::{Mlp, MlpGrad};
pub use policy::{gaussian_log_prob, policy_forward, Normalization, PolicyNetwork, ValueNetwork};
pub use ppo::{ppo_update, surrogate_loss_and_grad, Adam, Optimizers, PpoConfig, UpdateStats};
pub use rollout::{collect_rollouts, run_episode, worker_seed, Agent, EpisodeOutcome, RolloutBatch};
pub use train::{resume, train, train_iteration, write_learning_curve, Checkpoint, CurveRow, Task, TrainConfig};
