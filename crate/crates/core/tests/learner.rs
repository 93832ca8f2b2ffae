use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sim2real::env::EnvConfig;
use sim2real::learner::*;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Direct summation of discounted TD residuals inside each episode.
fn brute_force_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let next = if dones[t] || t + 1 == n { 0.0 } else { values[t + 1] };
            rewards[t] + gamma * next - values[t]
        })
        .collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut k = 0;
            loop {
                sum += (gamma * lambda).powi(k as i32) * delta[t + k];
                if dones[t + k] || t + k + 1 == n {
                    break;
                }
                k += 1;
            }
            sum
        })
        .collect()
}

#[test]
fn gae_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = 100;
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.random_bool(0.05)).collect();
        let (gamma, lambda) = (rng.random_range(0.8..1.0), rng.random_range(0.0..1.0));
        let (adv, ret) = gae(&rewards, &values, &dones, gamma, lambda);
        let oracle = brute_force_gae(&rewards, &values, &dones, gamma, lambda);
        for t in 0..n {
            assert!((adv[t] - oracle[t]).abs() < 1e-10, "t={t}: {} vs {}", adv[t], oracle[t]);
            assert!((ret[t] - adv[t] - values[t]).abs() < 1e-12);
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn policy_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut policy = PolicyNetwork::new(3, (5, 4), 2, &mut rng);
    // Larger output weights so the mean actually depends on every layer.
    let mut p = policy.flat_params();
    p.iter_mut().for_each(|x| *x += rng.random_range(-0.3..0.3));
    policy.set_flat_params(&p).unwrap();
    let obs = random_matrix(&mut rng, 6, 3);
    let actions = random_matrix(&mut rng, 6, 2);
    let coef: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();

    let objective = |pol: &PolicyNetwork| -> f64 {
        let b = pol.log_probs(&obs, &actions).unwrap();
        b.log_probs.iter().zip(&coef).map(|(l, c)| l * c).sum()
    };
    let batch = policy.log_probs(&obs, &actions).unwrap();
    let analytic = policy.log_prob_grad(&batch, &actions, &coef);
    let h = 1e-5;
    let base = policy.flat_params();
    for i in 0..base.len() {
        let mut plus = policy.clone();
        let mut q = base.clone();
        q[i] += h;
        plus.set_flat_params(&q).unwrap();
        let mut minus = policy.clone();
        q[i] -= 2.0 * h;
        minus.set_flat_params(&q).unwrap();
        let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
        assert!(
            rel_err(analytic[i], numeric) < 1e-4,
            "param {i}: analytic {} numeric {numeric}",
            analytic[i]
        );
    }
}

#[test]
fn mean_jacobian_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = Mlp::orthogonal(&[3, 4, 4, 2], 1.0, &mut rng);
    let x = random_matrix(&mut rng, 1, 3);
    let (_, cache) = net.forward_batch(&x).unwrap();
    let h = 1e-5;
    let base = net.flat_params();
    for out in 0..2 {
        let mut d = Array2::zeros((1, 2));
        d[(0, out)] = 1.0;
        let analytic = net.backward(&cache, &d).flat();
        for i in 0..base.len() {
            let eval = |delta: f64| {
                let mut n = net.clone();
                let mut q = base.clone();
                q[i] += delta;
                n.set_flat_params(&q).unwrap();
                n.forward(x.row(0).as_slice().unwrap()).unwrap()[out]
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(rel_err(analytic[i], numeric) < 1e-4, "out {out} param {i}");
        }
    }
}

fn check_value_gradient(value: &ValueNetwork, obs: &Array2<f64>, targets: &[f64]) {
    let (_, grad) = value.loss_and_grad(obs, targets).unwrap();
    let analytic = grad.flat();
    let base = value.net.flat_params();
    let h = 1e-5;
    for i in 0..base.len() {
        let eval = |delta: f64| {
            let mut v = value.clone();
            let mut q = base.clone();
            q[i] += delta;
            v.net.set_flat_params(&q).unwrap();
            v.loss_and_grad(obs, targets).unwrap().0
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        assert!(
            rel_err(analytic[i], numeric) < 1e-4,
            "param {i}: {} vs {numeric}",
            analytic[i]
        );
    }
}

#[test]
fn value_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tiny = ValueNetwork {
        net: Mlp::orthogonal(&[1, 1, 1], 1.0, &mut rng),
    };
    assert_eq!(tiny.net.num_params(), 4);
    let obs = random_matrix(&mut rng, 8, 1);
    let targets: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    check_value_gradient(&tiny, &obs, &targets);

    let value = ValueNetwork::new(4, (6, 5), &mut rng);
    let obs = random_matrix(&mut rng, 10, 4);
    let targets: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    check_value_gradient(&value, &obs, &targets);
}

#[test]
fn zero_policy_has_zero_mean_and_unit_std() {
    let policy = PolicyNetwork::zeros(4, (3, 3), 8);
    let (mean, std) = policy_forward(&policy, &[0.3, -0.2, 1.0, 0.0]).unwrap();
    assert_eq!(mean, vec![0.0; 8]);
    assert_eq!(std, vec![1.0; 8]);
    assert!(policy_forward(&policy, &[0.0; 5]).is_err());
}

fn small_config(task: Task, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::preset(task, 4 * 60 * 10, seed);
    cfg.ppo.n_workers = 4;
    cfg.ppo.horizon = 60;
    cfg.ppo.minibatch_size = 64;
    cfg.ppo.epochs = 2;
    cfg
}

#[test]
fn fresh_batch_ratios_are_one() {
    let cfg = small_config(Task::Trot, 3);
    let ck = Checkpoint::initial(&cfg).unwrap();
    let batch = collect_rollouts(&ck.agent, &cfg.env, 4, 60, 17).unwrap();
    let adv = vec![1.0; batch.len()];
    let s = surrogate_loss_and_grad(
        &ck.agent.policy,
        &batch.obs,
        &batch.actions,
        &batch.log_probs,
        &adv,
        0.2,
        0.0,
    )
    .unwrap();
    for r in &s.ratios {
        assert!((r - 1.0).abs() < 1e-9);
    }
    assert_eq!(s.clip_fraction, 0.0);
    assert!((s.loss + 1.0).abs() < 1e-9);

    let (adv, ret) = gae(&batch.rewards, &batch.values, &batch.dones, 0.99, 0.95);
    let mut agent = ck.agent.clone();
    let mut opt = Optimizers::for_agent(&agent);
    let stats = ppo_update(&mut agent, &mut opt, &batch, &adv, &ret, &cfg.ppo, 3e-4, 1).unwrap();
    assert!(stats.first_ratio_deviation < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn zero_clip_gives_zero_policy_gradient(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = PolicyNetwork::new(4, (6, 5), 3, &mut rng);
        let obs = random_matrix(&mut rng, 12, 4);
        let actions = random_matrix(&mut rng, 12, 3);
        let adv: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let old = policy.log_probs(&obs, &actions).unwrap().log_probs;
        let s = surrogate_loss_and_grad(&policy, &obs, &actions, &old, &adv, 0.0, 0.0).unwrap();
        prop_assert!(s.grad.iter().all(|g| *g == 0.0));
        let open = surrogate_loss_and_grad(&policy, &obs, &actions, &old, &adv, 0.2, 0.0).unwrap();
        prop_assert!(open.grad.iter().any(|g| *g != 0.0));
    }
}

#[test]
fn rollouts_independent_of_scheduling() {
    let cfg = EnvConfig::gallop();
    let ck = Checkpoint::initial(&TrainConfig::preset(Task::Gallop, 1000, 8)).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| collect_rollouts(&ck.agent, &cfg, 5, 80, 21).unwrap());
    let b = four.install(|| collect_rollouts(&ck.agent, &cfg, 5, 80, 21).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert!(a.len() <= 5 * 80);

    let single = collect_rollouts(&ck.agent, &cfg, 1, 80, 21).unwrap();
    let first = a.episode_lengths[0];
    assert_eq!(single.rewards, a.rewards[..first]);
    assert_eq!(single.log_probs, a.log_probs[..first]);
}

#[test]
fn training_stub_is_bit_exact() {
    let cfg = small_config(Task::Trot, 12);
    let a = train(&cfg, None).unwrap();
    let b = train(&cfg, None).unwrap();
    assert_eq!(a.iteration, 10);
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn interrupted_training_resumes_identically() {
    let cfg = small_config(Task::Trot, 13);
    let full = train(&cfg, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut ck = Checkpoint::initial(&cfg).unwrap();
    for _ in 0..4 {
        train_iteration(&mut ck).unwrap();
    }
    let path = dir.path().join("checkpoint.json");
    ck.save(&path).unwrap();
    let resumed = resume(Checkpoint::load(&path).unwrap(), None, |_, _| {}).unwrap();
    assert_eq!(resumed.curve, full.curve);
    assert_eq!(resumed.agent, full.agent);
}

#[test]
fn presets_match_network_table() {
    let g = Checkpoint::initial(&TrainConfig::preset(Task::Gallop, 1, 0)).unwrap();
    assert_eq!(g.policy_sizes, vec![12, 185, 95, 8]);
    assert_eq!(g.value_sizes, vec![12, 95, 85, 1]);
    let t = Checkpoint::initial(&TrainConfig::preset(Task::Trot, 1, 0)).unwrap();
    assert_eq!(t.policy_sizes, vec![4, 125, 89, 8]);
    assert_eq!(t.value_sizes, vec![4, 89, 55, 1]);
    assert_eq!(t.config.env.observation_dim(), 4);
}
