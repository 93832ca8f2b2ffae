use sim2real::dynamics::DynamicsParams;
use sim2real::env::EnvConfig;
use sim2real::gapeval::*;
use sim2real::learner::{run_episode, Agent, Checkpoint, Normalization, PolicyNetwork, Task, TrainConfig};
use sim2real::randomize::{RandomizationRanges, RandomizedParam};
use sim2real::Error;

fn zero_agent(cfg: &EnvConfig, task: Task) -> Agent {
    let ck = Checkpoint::initial(&TrainConfig {
        env: cfg.clone(),
        ..TrainConfig::preset(task, 1, 0)
    })
    .unwrap();
    Agent {
        policy: PolicyNetwork::zeros(cfg.observation_dim(), task.policy_hidden(), 8),
        value: ck.agent.value,
        normalization: Normalization::for_env(cfg),
    }
}

#[test]
fn zero_policy_reduces_to_open_loop() {
    let mut trot = EnvConfig::trot();
    trot.randomize = false;
    trot.perturbation.enabled = false;
    let agent = zero_agent(&trot, Task::Trot);
    let hybrid = run_episode(&agent, &trot, 4, false).unwrap();
    let open = run_episode(&agent, &trot.clone().open_loop_only(), 4, false).unwrap();
    assert_eq!(hybrid.total_return, open.total_return);
    assert_eq!(hybrid.length, open.length);
}

#[test]
fn evaluation_is_deterministic_and_checks_dims() {
    let cfg = evaluation_env(&EnvConfig::trot());
    let agent = zero_agent(&cfg, Task::Trot);
    let a = evaluate_policy(&agent, &cfg, 3, 7).unwrap();
    let b = evaluate_policy(&agent, &cfg, 3, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.stats.returns.len(), 3);
    assert_eq!(a.traces.len(), 3);
    assert!((0.0..=1.0).contains(&a.stats.success_rate));

    let mut large = cfg.clone();
    large.observation_space = sim2real::env::ObservationSpace::Large;
    assert!(matches!(
        evaluate_policy(&agent, &large, 1, 0),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn gap_vanishes_when_environments_match() {
    let cfg = EnvConfig::trot();
    let agent = zero_agent(&cfg, Task::Trot);
    let same = PseudoRealConfig {
        params: cfg.params.clone(),
        actuator: cfg.actuator,
    };
    let report = reality_gap(&agent, &cfg, &same, 3, 1).unwrap();
    assert_eq!(report.gap, 0.0);
    assert_eq!(report.sim_return, report.pseudo_real_return);

    let swapped = GapReport::new(report.pseudo_real_return.clone(), report.sim_return.clone());
    assert_eq!(swapped.gap, -report.gap);
}

#[test]
fn pseudo_real_defaults() {
    let p = PseudoRealConfig::default();
    assert_eq!(p.params.latency, 0.020);
    assert_eq!(p.params.battery_voltage, 14.5);
    assert_eq!(p.params.contact_friction_coefficient, 0.7);
    assert_eq!(p.params.inertia_scale, 1.3);
    assert_eq!(p.params.motor_strength_scale, 0.9);
    assert!(p.differing_fields(&DynamicsParams::default()).len() >= 3);
    let env = p.env_config(&EnvConfig::gallop());
    assert!(!env.randomize && !env.perturbation.enabled && env.latency_model);
}

#[test]
fn inertia_sweep_covers_range() {
    let cfg = EnvConfig::trot();
    let agent = zero_agent(&cfg, Task::Trot);
    let ranges = RandomizationRanges::default();
    let curve = parameter_sweep(&agent, &cfg, "inertia", &ranges, 10, 1, 0).unwrap();
    assert_eq!(curve.points.len(), 10);
    assert_eq!(curve.points[0].parameter_value, 0.5);
    assert_eq!(curve.points[9].parameter_value, 1.5);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    curve.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("parameter_value,mean,std"));
    assert_eq!(lines.count(), 10);

    match parameter_sweep(&agent, &cfg, "gravity", &ranges, 10, 1, 0) {
        Err(Error::UnknownParameter { valid, .. }) => assert!(valid.contains("inertia")),
        other => panic!("expected unknown parameter error, got {other:?}"),
    }
}

#[test]
fn pinned_sweep_reproduces_evaluation() {
    let cfg = EnvConfig::trot();
    let agent = zero_agent(&cfg, Task::Trot);
    let ranges = RandomizationRanges::pinned_to(&cfg.params);
    let curve = parameter_sweep(&agent, &cfg, "battery_voltage", &ranges, 10, 2, 3).unwrap();
    let direct = evaluate_policy(&agent, &evaluation_env(&cfg), 2, 3).unwrap().stats;
    for p in &curve.points {
        assert_eq!(p.mean, direct.mean);
        assert_eq!(p.std, direct.std);
    }
    let report = RobustnessReport::from_sweeps(vec![curve]);
    assert_eq!(report.std, 0.0);
}

#[test]
fn robustness_aggregates_all_environments() {
    let cfg = EnvConfig::trot();
    let agent = zero_agent(&cfg, Task::Trot);
    let ranges = RandomizationRanges::default();
    let params = [RandomizedParam::Inertia, RandomizedParam::Mass];
    let report = robustness_report(&agent, &cfg, &params, &ranges, 3, 1, 0).unwrap();
    assert_eq!(report.sweeps.len(), 2);
    let all: Vec<f64> = report.sweeps.iter().flat_map(|s| s.means()).collect();
    assert_eq!(all.len(), 6);
    let mean = all.iter().sum::<f64>() / 6.0;
    assert!((report.mean - mean).abs() < 1e-12);
    assert!(report.mean.is_finite() && report.std.is_finite());
}

#[test]
fn gait_speed_times_duration_is_distance() {
    let cfg = evaluation_env(&EnvConfig::trot());
    let agent = zero_agent(&cfg, Task::Trot);
    let ev = evaluate_policy(&agent, &cfg, 2, 0).unwrap();
    for t in &ev.traces {
        let m = gait_metrics(t).unwrap();
        assert!((m.speed * t.duration() - m.distance).abs() < 1e-9);
        assert!(m.avg_mech_power >= 0.0);
    }
}
