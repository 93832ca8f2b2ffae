//! Command-line front end: run configs, training, evaluation, gap and sweep
//! reports, and latency calibration.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::actuator::ActuatorKind;
use crate::dynamics::DynamicsParams;
use crate::env::{EnvConfig, ObservationSpace};
use crate::error::{Error, Result};
use crate::gapeval::{
    evaluate_policy, evaluation_env, gait_metrics, parameter_sweep, reality_gap, GaitMetrics, PseudoRealConfig,
    ReturnStats, RobustnessReport,
};
use crate::learner::{resume, train::CHECKPOINT_FILE, train::CURVE_FILE, Checkpoint, Task, TrainConfig};
use crate::randomize::RandomizedParam;
use crate::sensing::{measure_latency, LatencyPlant};

/// Environment variable naming the default output root.
pub const OUT_ENV_VAR: &str = "SIM2REAL_OUT";
/// Period of the motor PD loop used for inner-loop latency calibration, seconds.
pub const INNER_LOOP_STEP: f64 = 0.003;
/// Resolved configuration written into every output directory.
pub const CONFIG_FILE: &str = "config.json";

/// A training run as given by a config file and flags. Unset fields fall back
/// to the task preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<Task>,
    pub observation_space: Option<ObservationSpace>,
    pub randomize: Option<bool>,
    pub perturb: Option<bool>,
    pub baseline_actuator: Option<bool>,
    pub latency_model: Option<bool>,
    pub max_steps: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Merged field by field into the preset `EnvConfig`, including `params` and `ranges`.
    pub env: Value,
    /// Merged field by field into the preset `PpoConfig`.
    pub ppo: Value,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// `other`'s set fields win.
    pub fn overlay(mut self, other: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            task,
            observation_space,
            randomize,
            perturb,
            baseline_actuator,
            latency_model,
            max_steps,
            seed,
            out_dir
        );
        merge_json(&mut self.env, other.env);
        merge_json(&mut self.ppo, other.ppo);
        self
    }

    /// Preset, then JSON overrides, then flags.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let task = self.task.unwrap_or(Task::Gallop);
        let mut cfg = TrainConfig::preset(task, self.max_steps.unwrap_or(500_000), self.seed.unwrap_or(0));
        cfg.env = apply_overrides(&cfg.env, &self.env)?;
        cfg.ppo = apply_overrides(&cfg.ppo, &self.ppo)?;
        if let Some(obs) = self.observation_space {
            cfg.env.observation_space = obs;
        }
        if let Some(r) = self.randomize {
            cfg.env.randomize = r;
        }
        if let Some(p) = self.perturb {
            cfg.env.perturbation.enabled = p;
        }
        if let Some(b) = self.baseline_actuator {
            cfg.env.actuator = if b {
                ActuatorKind::Baseline
            } else {
                ActuatorKind::Improved
            };
        }
        if let Some(l) = self.latency_model {
            cfg.env.latency_model = l;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Recursive object merge; non-object values replace.
pub fn merge_json(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (_, Value::Null) => {}
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge_json(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

fn apply_overrides<T: Serialize + serde::de::DeserializeOwned>(base: &T, overrides: &Value) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    merge_json(&mut v, overrides.clone());
    serde_json::from_value(v).map_err(|e| Error::Config(format!("invalid override: {e}")))
}

/// 0 success, 1 configuration or input error, 2 runtime divergence.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } | Error::NonFiniteLoss(_) => 2,
        Error::Worker { source, .. } => exit_code(source),
        _ => 1,
    }
}

/// Output root: `$SIM2REAL_OUT`, else `runs`.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_obs(s: &str) -> std::result::Result<ObservationSpace, String> {
    match s {
        "small" => Ok(ObservationSpace::Small),
        "large" => Ok(ObservationSpace::Large),
        _ => Err(format!("unknown observation space `{s}`; expected small or large")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "sim2real", version, about = "Quadruped sim-to-real training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the deterministic mean policy.
    Eval(EvalArgs),
    /// Reality gap between nominal simulation and the pseudo-real environment.
    Gap(GapArgs),
    /// Sweep randomized parameters over their ranges.
    Sweep(SweepArgs),
    /// Recover injected latencies with the PWM spike test.
    CalibrateLatency(CalibrateArgs),
}

/// Environment flags shared by training and evaluation.
#[derive(Debug, Default, Args)]
pub struct EnvFlags {
    #[arg(long, value_parser = parse_obs)]
    pub obs: Option<ObservationSpace>,
    #[arg(long)]
    pub no_randomize: bool,
    #[arg(long)]
    pub no_perturb: bool,
    #[arg(long)]
    pub baseline_actuator: bool,
    #[arg(long)]
    pub no_latency_model: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON `RunConfig`; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub env: EnvFlags,
}

impl TrainArgs {
    pub fn run_config(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let flags = RunConfig {
            task: self.task,
            observation_space: self.env.obs,
            randomize: self.env.no_randomize.then_some(false),
            perturb: self.env.no_perturb.then_some(false),
            baseline_actuator: self.env.baseline_actuator.then_some(true),
            latency_model: self.env.no_latency_model.then_some(false),
            max_steps: self.steps,
            seed: self.seed,
            out_dir: self.out.clone(),
            ..RunConfig::default()
        };
        Ok(file.overlay(flags))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EnvSelection {
    /// Training parameters at nominal, no randomization, no pushes.
    Nominal,
    /// The frozen held-out parameter set.
    PseudoReal,
    /// Exactly the training environment.
    Train,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "nominal")]
    pub env: EnvSelection,
    #[arg(long, default_value_t = 9)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write one trace CSV per episode.
    #[arg(long)]
    pub traces: bool,
    /// JSON `PseudoRealConfig` replacing the default held-out set.
    #[arg(long)]
    pub pseudo_real: Option<PathBuf>,
    #[command(flatten)]
    pub flags: EnvFlags,
}

#[derive(Debug, Args)]
pub struct GapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub pseudo_real: Option<PathBuf>,
    /// Deploy on the constraint actuator instead of the motor model.
    #[arg(long)]
    pub baseline_actuator: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Parameter name; repeat for several, omit for all.
    #[arg(long = "param")]
    pub params: Vec<String>,
    #[arg(long, default_value_t = 10)]
    pub values: usize,
    #[arg(long, default_value_t = 3)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Injected policy-loop latency, ms; repeatable.
    #[arg(long = "latency-ms", default_values_t = vec![0.0, 3.0, 18.0, 40.0])]
    pub latency_ms: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Gap(a) => cmd_gap(&a).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(&a).map(|_| ()),
        Command::CalibrateLatency(a) => cmd_calibrate_latency(&a).map(|_| ()),
    }
}

fn out_dir(explicit: Option<&PathBuf>, default_name: &str) -> Result<PathBuf> {
    let dir = explicit
        .cloned()
        .unwrap_or_else(|| default_out_root().join(default_name));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Trains and writes `config.json`, `checkpoint.json` and `learning_curve.csv`.
pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let run = args.run_config()?;
    let cfg = run.resolve()?;
    let dir = out_dir(
        run.out_dir.as_ref(),
        &format!(
            "{}-{}-seed{}",
            cfg.task.name(),
            obs_name(cfg.env.observation_space),
            cfg.seed
        ),
    )?;
    write_json(&dir.join(CONFIG_FILE), &cfg)?;
    let ck_path = dir.join(CHECKPOINT_FILE);
    let ck = if args.resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        if ck.config != cfg {
            return Err(Error::Config("checkpoint was trained with a different config".into()));
        }
        ck
    } else {
        Checkpoint::initial(&cfg)?
    };
    let ck = resume(ck, Some(&dir), |row, stats| {
        eprintln!(
            "iter {:4}  steps {:8}  return {:9.4} ± {:.4}  kl {:.4}  clip {:.3}",
            row.iteration, row.env_steps, row.mean_return, row.std_return, stats.approx_kl, stats.clip_fraction
        );
    })?;
    ck.save(&ck_path)?;
    eprintln!("wrote {} and {}", ck_path.display(), dir.join(CURVE_FILE).display());
    Ok(dir)
}

fn obs_name(o: ObservationSpace) -> &'static str {
    match o {
        ObservationSpace::Small => "small",
        ObservationSpace::Large => "large",
    }
}

fn load_pseudo_real(path: Option<&PathBuf>) -> Result<PseudoRealConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
        None => Ok(PseudoRealConfig::default()),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} not found", path.display())));
    }
    Checkpoint::load(path)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalInvocation {
    pub checkpoint: PathBuf,
    pub env: EnvConfig,
    pub episodes: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub stats: ReturnStats,
    pub gaits: Vec<GaitMetrics>,
}

fn eval_env(ck: &Checkpoint, a: &EvalArgs) -> Result<EnvConfig> {
    let train_env = &ck.config.env;
    let mut env = match a.env {
        EnvSelection::Nominal => evaluation_env(train_env),
        EnvSelection::PseudoReal => load_pseudo_real(a.pseudo_real.as_ref())?.env_config(train_env),
        EnvSelection::Train => train_env.clone(),
    };
    let f = &a.flags;
    if let Some(o) = f.obs {
        env.observation_space = o;
    }
    if f.no_randomize {
        env.randomize = false;
    }
    if f.no_perturb {
        env.perturbation.enabled = false;
    }
    if f.baseline_actuator {
        env.actuator = ActuatorKind::Baseline;
    }
    if f.no_latency_model {
        env.latency_model = false;
    }
    env.validate()?;
    Ok(env)
}

/// Writes `eval.json` and, with `--traces`, `episode_<i>.csv` plus metadata.
pub fn cmd_eval(a: &EvalArgs) -> Result<EvalReport> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let env = eval_env(&ck, a)?;
    ck.agent.check_env(&env)?;
    let dir = out_dir(a.out.as_ref(), "eval")?;
    write_json(
        &dir.join(CONFIG_FILE),
        &EvalInvocation {
            checkpoint: a.checkpoint.clone(),
            env: env.clone(),
            episodes: a.episodes,
            seed: a.seed,
        },
    )?;
    let ev = evaluate_policy(&ck.agent, &env, a.episodes, a.seed)?;
    let gaits = ev.traces.iter().map(gait_metrics).collect::<Result<Vec<_>>>()?;
    if a.traces {
        for (i, t) in ev.traces.iter().enumerate() {
            t.write_csv(&dir.join(format!("episode_{i}.csv")))?;
            t.write_metadata_json(&dir.join(format!("episode_{i}.json")))?;
        }
    }
    let report = EvalReport { stats: ev.stats, gaits };
    write_json(&dir.join("eval.json"), &report)?;
    println!(
        "return {:.4} ± {:.4} (std {:.4}) over {} episodes, success {:.0}%",
        report.stats.mean,
        report.stats.std_error,
        report.stats.std,
        a.episodes,
        100.0 * report.stats.success_rate
    );
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapInvocation {
    pub checkpoint: PathBuf,
    pub nominal: EnvConfig,
    pub pseudo_real: PseudoRealConfig,
    pub episodes: usize,
    pub seed: u64,
}

/// Writes `gap.json`.
pub fn cmd_gap(a: &GapArgs) -> Result<crate::gapeval::GapReport> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let mut pseudo_real = load_pseudo_real(a.pseudo_real.as_ref())?;
    if a.baseline_actuator {
        pseudo_real.actuator = ActuatorKind::Baseline;
    }
    let dir = out_dir(a.out.as_ref(), "gap")?;
    write_json(
        &dir.join(CONFIG_FILE),
        &GapInvocation {
            checkpoint: a.checkpoint.clone(),
            nominal: ck.config.env.clone(),
            pseudo_real: pseudo_real.clone(),
            episodes: a.episodes,
            seed: a.seed,
        },
    )?;
    let report = reality_gap(&ck.agent, &ck.config.env, &pseudo_real, a.episodes, a.seed)?;
    report.write_json(&dir.join("gap.json"))?;
    println!(
        "sim {:.4} ± {:.4}  pseudo-real {:.4} ± {:.4}  gap {:.4}  success {:.0}%",
        report.sim_return.mean,
        report.sim_return.std_error,
        report.pseudo_real_return.mean,
        report.pseudo_real_return.std_error,
        report.gap,
        100.0 * report.success_rate
    );
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepInvocation {
    pub checkpoint: PathBuf,
    pub parameters: Vec<String>,
    pub values: usize,
    pub episodes: usize,
    pub seed: u64,
}

/// Writes `sweep_<param>.csv` per parameter and `robustness.json`.
pub fn cmd_sweep(a: &SweepArgs) -> Result<RobustnessReport> {
    let params: Vec<RandomizedParam> = if a.params.is_empty() {
        RandomizedParam::ALL.to_vec()
    } else {
        a.params
            .iter()
            .map(|p| RandomizedParam::from_name(p))
            .collect::<Result<_>>()?
    };
    let ck = load_checkpoint(&a.checkpoint)?;
    let dir = out_dir(a.out.as_ref(), "sweep")?;
    write_json(
        &dir.join(CONFIG_FILE),
        &SweepInvocation {
            checkpoint: a.checkpoint.clone(),
            parameters: params.iter().map(|p| p.name().to_string()).collect(),
            values: a.values,
            episodes: a.episodes,
            seed: a.seed,
        },
    )?;
    let env = &ck.config.env;
    let mut sweeps = Vec::with_capacity(params.len());
    for p in params {
        let curve = parameter_sweep(&ck.agent, env, p.name(), &env.ranges, a.values, a.episodes, a.seed)?;
        curve.write_csv(&dir.join(format!("sweep_{}.csv", p.name())))?;
        eprintln!("{}: {} points", p.name(), curve.points.len());
        sweeps.push(curve);
    }
    let report = RobustnessReport::from_sweeps(sweeps);
    write_json(&dir.join("robustness.json"), &report)?;
    println!(
        "mean {:.4}  std {:.4} across all test environments",
        report.mean, report.std
    );
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyMeasurement {
    pub loop_name: String,
    pub injected: f64,
    pub measured: f64,
    /// Resolution the measurement is judged at.
    pub control_step: f64,
}

impl LatencyMeasurement {
    pub fn within_one_step(&self) -> bool {
        (self.measured - self.injected).abs() <= self.control_step + 1e-12
    }
}

/// Policy-loop measurements for each injected latency, then the inner PD loop
/// at its nominal latency.
pub fn calibrate_latency(injected: &[f64]) -> Result<Vec<LatencyMeasurement>> {
    let nominal = DynamicsParams::default();
    let mut out = Vec::with_capacity(injected.len() + 1);
    for &latency in injected {
        let plant = LatencyPlant::new(latency, nominal.control_step);
        out.push(LatencyMeasurement {
            loop_name: "policy".into(),
            injected: latency,
            measured: measure_latency(&plant)?,
            control_step: plant.control_step,
        });
    }
    let plant = LatencyPlant::new(nominal.pd_latency, INNER_LOOP_STEP);
    out.push(LatencyMeasurement {
        loop_name: "inner".into(),
        injected: nominal.pd_latency,
        measured: measure_latency(&plant)?,
        control_step: plant.control_step,
    });
    Ok(out)
}

/// Prints injected vs measured latency and writes `latency.json`.
pub fn cmd_calibrate_latency(a: &CalibrateArgs) -> Result<Vec<LatencyMeasurement>> {
    let injected: Vec<f64> = a.latency_ms.iter().map(|ms| ms / 1000.0).collect();
    let report = calibrate_latency(&injected)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "{:<8} {:>12} {:>12} {:>10}",
        "loop", "injected_ms", "measured_ms", "step_ms"
    )?;
    for m in &report {
        writeln!(
            stdout,
            "{:<8} {:>12.1} {:>12.1} {:>10.1}",
            m.loop_name,
            1000.0 * m.injected,
            1000.0 * m.measured,
            1000.0 * m.control_step
        )?;
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("latency.json"), &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_preset() {
        let file: RunConfig = serde_json::from_str(
            r#"{"task": "trot", "seed": 4, "env": {"params": {"battery_voltage": 15.0}}, "ppo": {"epochs": 3}}"#,
        )
        .unwrap();
        let flags = RunConfig {
            seed: Some(9),
            randomize: Some(false),
            ..RunConfig::default()
        };
        let cfg = file.overlay(flags).resolve().unwrap();
        assert_eq!(cfg.task, Task::Trot);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.env.observation_dim(), 4);
        assert_eq!(cfg.env.params.battery_voltage, 15.0);
        assert_eq!(cfg.env.params.latency, DynamicsParams::default().latency);
        assert_eq!(cfg.ppo.epochs, 3);
        assert!(!cfg.env.randomize);
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let bad: RunConfig = serde_json::from_str(r#"{"env": {"params": {"voltage": 3}}}"#).unwrap();
        let err = bad.resolve().unwrap_err();
        assert_eq!(exit_code(&err), 1);
        assert!(serde_json::from_str::<RunConfig>(r#"{"taks": "trot"}"#).is_err());
    }

    #[test]
    fn divergence_maps_to_two() {
        let e = Error::Worker {
            worker: 3,
            step: 10,
            source: Box::new(Error::Diverged { field: "state" }),
        };
        assert_eq!(exit_code(&e), 2);
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
    }

    #[test]
    fn missing_checkpoint_is_nonzero() {
        let code = main_with_args(["sim2real", "eval", "--checkpoint", "/nonexistent/c.json"]);
        assert_eq!(code, 1);
    }
}
