//! The locomotion POMDP: hybrid open-loop plus feedback actions, the
//! progress-minus-energy reward, termination, perturbation pushes, and the
//! control loop tying dynamics, actuators and sensing together.

use std::f64::consts::{FRAC_PI_2, PI};
use std::hash::{DefaultHasher, Hasher};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::actuator::{constraint_actuator_torque, dc_motor_torque, leg_to_motor, pd_pwm, ActuatorKind, MotorCommand};
use crate::dynamics::{
    base_tilt, standing_height, step_dynamics_with_contacts, DynamicsParams, RobotState, NUM_LEGS, NUM_MOTORS,
};
use crate::error::{Error, Result};
use crate::randomize::{sample_params, RandomizationRanges};
use crate::sensing::{apply_imu_corruption, LatencyBuffer, IMU_CHANNELS};

pub const ACTION_DIM: usize = 2 * NUM_LEGS;

/// Closed interval in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub const fn symmetric(half_width: f64) -> Self {
        Self::new(-half_width, half_width)
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationSpace {
    /// Roll, pitch, roll rate, pitch rate.
    #[default]
    Small,
    /// The IMU channels plus the eight motor angles.
    Large,
}

impl ObservationSpace {
    pub fn dim(self) -> usize {
        match self {
            ObservationSpace::Small => IMU_CHANNELS,
            ObservationSpace::Large => IMU_CHANNELS + NUM_MOTORS,
        }
    }
}

/// The user-specified component of the hybrid policy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OpenLoopSignal {
    #[default]
    Zero,
    Trot,
    /// Cyclic table of leg-space actions, linearly interpolated.
    Custom {
        period: f64,
        table: Vec<[f64; ACTION_DIM]>,
    },
}

impl OpenLoopSignal {
    pub fn at(&self, t: f64) -> [f64; ACTION_DIM] {
        match self {
            OpenLoopSignal::Zero => [0.0; ACTION_DIM],
            OpenLoopSignal::Trot => open_loop_trot(t),
            OpenLoopSignal::Custom { period, table } => {
                let n = table.len();
                if n == 0 {
                    return [0.0; ACTION_DIM];
                }
                let phase = (t / period).rem_euclid(1.0) * n as f64;
                let i = (phase.floor() as usize).min(n - 1);
                let w = phase - i as f64;
                let (a, b) = (&table[i], &table[(i + 1) % n]);
                std::array::from_fn(|k| a[k] + w * (b[k] - a[k]))
            }
        }
    }
}

/// Trot reference: diagonal pair front-left/back-right follows
/// `(0.3 sin 4πt, 0.35 sin 4πt + 2)`, the other pair runs half a cycle behind.
pub fn open_loop_trot(t: f64) -> [f64; ACTION_DIM] {
    let phase = 4.0 * PI * t;
    let pair = |p: f64| (0.3 * p.sin(), 0.35 * p.sin() + 2.0);
    let a = pair(phase);
    let b = pair(phase + PI);
    // leg order: FL, BL, FR, BR
    [a.0, a.1, b.0, b.1, b.0, b.1, a.0, a.1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub enabled: bool,
    pub period_steps: usize,
    pub duration_steps: usize,
    /// Force magnitude range, N.
    pub magnitude_range: (f64, f64),
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            period_steps: 200,
            duration_steps: 10,
            magnitude_range: (130.0, 220.0),
        }
    }
}

/// Push on the base for a control step. Bursts start at every positive
/// multiple of `period_steps`; each burst draws its own direction and
/// magnitude from `seed` and the burst index.
pub fn perturbation_for_step(step: usize, seed: u64, config: &PerturbationConfig) -> Option<Vector3<f64>> {
    if !config.enabled || config.period_steps == 0 {
        return None;
    }
    let burst = step / config.period_steps;
    if burst == 0 || step % config.period_steps >= config.duration_steps {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(burst as u64);
    let dir: [f64; 3] = UnitSphere.sample(&mut rng);
    let (lo, hi) = config.magnitude_range;
    let magnitude = lo + (hi - lo) * rng.random::<f64>();
    Some(Vector3::from(dir) * magnitude.clamp(lo, hi))
}

/// Everything that defines an environment instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub observation_space: ObservationSpace,
    pub swing_bounds: Bounds,
    pub extension_bounds: Bounds,
    pub open_loop_signal: OpenLoopSignal,
    pub feedback_swing_bounds: Bounds,
    pub feedback_extension_bounds: Bounds,
    pub reward_weight: f64,
    pub energy_term: EnergyTerm,
    pub desired_direction: [f64; 3],
    pub episode_cap: usize,
    pub tilt_limit: f64,
    pub perturbation: PerturbationConfig,
    pub randomize: bool,
    pub ranges: RandomizationRanges,
    /// Nominal parameters; the source for every non-randomized field.
    pub params: DynamicsParams,
    pub actuator: ActuatorKind,
    /// Off: observations and the PD loop see the current state.
    pub latency_model: bool,
    pub kp: f64,
    pub kd: f64,
    /// Physics and PD-loop period, seconds.
    pub substep: f64,
    /// Torque clamp of the constraint actuator, Nm.
    pub baseline_torque_limit: Option<f64>,
    /// Uniform motor-angle jitter at reset, radians.
    pub init_jitter: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::gallop()
    }
}

impl EnvConfig {
    /// Learn-from-scratch galloping: no reference signal, wide feedback bounds.
    pub fn gallop() -> Self {
        let swing = Bounds::symmetric(0.5);
        let extension = Bounds::new(FRAC_PI_2 - 0.5, FRAC_PI_2 + 0.5);
        Self {
            observation_space: ObservationSpace::Large,
            swing_bounds: swing,
            extension_bounds: extension,
            open_loop_signal: OpenLoopSignal::Zero,
            feedback_swing_bounds: swing,
            feedback_extension_bounds: extension,
            reward_weight: 0.008,
            energy_term: EnergyTerm::PerMotor,
            desired_direction: [1.0, 0.0, 0.0],
            episode_cap: 1000,
            tilt_limit: 0.5,
            perturbation: PerturbationConfig::default(),
            randomize: true,
            ranges: RandomizationRanges::default(),
            params: DynamicsParams::default(),
            actuator: ActuatorKind::Improved,
            latency_model: true,
            kp: 1.2,
            kd: 0.02,
            substep: 0.001,
            baseline_torque_limit: Some(3.5),
            init_jitter: 0.05,
        }
    }

    /// Trotting around the sine reference with ±0.25 rad of feedback.
    pub fn trot() -> Self {
        Self {
            observation_space: ObservationSpace::Small,
            swing_bounds: Bounds::symmetric(0.55),
            extension_bounds: Bounds::new(1.4, 2.6),
            open_loop_signal: OpenLoopSignal::Trot,
            feedback_swing_bounds: Bounds::symmetric(0.25),
            feedback_extension_bounds: Bounds::symmetric(0.25),
            ..Self::gallop()
        }
    }

    /// The fully user-specified controller: feedback bounds pinned to zero.
    pub fn open_loop_only(mut self) -> Self {
        self.feedback_swing_bounds = Bounds::new(0.0, 0.0);
        self.feedback_extension_bounds = Bounds::new(0.0, 0.0);
        self
    }

    pub fn observation_dim(&self) -> usize {
        self.observation_space.dim()
    }

    pub fn feedback_bounds(&self, channel: usize) -> Bounds {
        if channel % 2 == 0 {
            self.feedback_swing_bounds
        } else {
            self.feedback_extension_bounds
        }
    }

    pub fn global_bounds(&self, channel: usize) -> Bounds {
        if channel % 2 == 0 {
            self.swing_bounds
        } else {
            self.extension_bounds
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [
            ("swing_bounds", self.swing_bounds),
            ("extension_bounds", self.extension_bounds),
        ] {
            if !(b.lower < b.upper) {
                return Err(Error::Config(format!(
                    "{name} must satisfy lower < upper, got [{}, {}]",
                    b.lower, b.upper
                )));
            }
        }
        for (name, b) in [
            ("feedback_swing_bounds", self.feedback_swing_bounds),
            ("feedback_extension_bounds", self.feedback_extension_bounds),
        ] {
            if !(b.lower <= b.upper) {
                return Err(Error::Config(format!(
                    "{name} must satisfy lower <= upper, got [{}, {}]",
                    b.lower, b.upper
                )));
            }
        }
        let d = Vector3::from(self.desired_direction);
        if (d.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "desired_direction must be a unit vector, has norm {}",
                d.norm()
            )));
        }
        if self.episode_cap == 0 {
            return Err(Error::Config("episode_cap must be positive".into()));
        }
        if !(self.tilt_limit > 0.0) {
            return Err(Error::Config("tilt_limit must be positive".into()));
        }
        if !(self.reward_weight >= 0.0 && self.reward_weight.is_finite()) {
            return Err(Error::Config("reward_weight must be non-negative".into()));
        }
        if !(self.substep > 0.0) {
            return Err(Error::Config("substep must be positive".into()));
        }
        if !(self.kp >= 0.0 && self.kd >= 0.0) {
            return Err(Error::Config("PD gains must be non-negative".into()));
        }
        let (lo, hi) = self.perturbation.magnitude_range;
        if !(0.0 <= lo && lo <= hi) {
            return Err(Error::Config(
                "perturbation magnitude range must satisfy 0 <= lo <= hi".into(),
            ));
        }
        self.params.validate()?;
        self.ranges.validate()
    }
}

/// Progress along `d` minus the weighted energy spent during the step.
pub fn reward(
    p_n: &Vector3<f64>,
    p_prev: &Vector3<f64>,
    d: &Vector3<f64>,
    torques: &[f64; NUM_MOTORS],
    motor_velocities: &[f64; NUM_MOTORS],
    dt: f64,
    w: f64,
) -> f64 {
    reward_from_power(p_n, p_prev, d, mechanical_power(torques, motor_velocities), dt, w)
}

fn reward_from_power(p_n: &Vector3<f64>, p_prev: &Vector3<f64>, d: &Vector3<f64>, power: f64, dt: f64, w: f64) -> f64 {
    (p_n - p_prev).dot(d) - w * dt * power
}

/// How motor powers combine in the reward's energy term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyTerm {
    /// `Σ |τ_i q̇_i|`
    #[default]
    PerMotor,
    /// `|Σ τ_i q̇_i|`
    Net,
}

impl EnergyTerm {
    pub fn power(self, torques: &[f64; NUM_MOTORS], motor_velocities: &[f64; NUM_MOTORS]) -> f64 {
        match self {
            EnergyTerm::PerMotor => mechanical_power(torques, motor_velocities),
            EnergyTerm::Net => torques
                .iter()
                .zip(motor_velocities)
                .map(|(t, v)| t * v)
                .sum::<f64>()
                .abs(),
        }
    }
}

/// `Σ |τ_i q̇_i|` in watts.
pub fn mechanical_power(torques: &[f64; NUM_MOTORS], motor_velocities: &[f64; NUM_MOTORS]) -> f64 {
    torques.iter().zip(motor_velocities).map(|(t, v)| (t * v).abs()).sum()
}

/// Hybrid action: clamped feedback on top of the reference, then clamped to
/// the global leg-space bounds.
pub fn compose_action(t: f64, feedback: &[f64; ACTION_DIM], config: &EnvConfig) -> [f64; ACTION_DIM] {
    let reference = config.open_loop_signal.at(t);
    std::array::from_fn(|i| {
        let fb = config.feedback_bounds(i).clamp(feedback[i]);
        config.global_bounds(i).clamp(reference[i] + fb)
    })
}

/// Leg-space action to the eight motor angle targets.
pub fn action_to_motor_targets(action: &[f64; ACTION_DIM]) -> [f64; NUM_MOTORS] {
    let mut q = [0.0; NUM_MOTORS];
    for leg in 0..NUM_LEGS {
        let (t1, t2) = leg_to_motor(action[2 * leg], action[2 * leg + 1]);
        q[2 * leg] = t1;
        q[2 * leg + 1] = t2;
    }
    q
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub base_position: [f64; 3],
    /// Torques applied during the last physics substep.
    pub torques: [f64; NUM_MOTORS],
    pub motor_velocities: [f64; NUM_MOTORS],
    pub foot_contacts: [bool; NUM_LEGS],
    /// Substep-averaged `Σ |τ q̇|`, watts.
    pub mechanical_power: f64,
    pub perturbed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One control step of an episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub time: f64,
    pub base_x: f64,
    pub base_y: f64,
    pub base_z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub action: [f64; ACTION_DIM],
    pub torques: [f64; NUM_MOTORS],
    pub mechanical_power: f64,
    pub reward: f64,
}

/// Per-step log of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub control_step: f64,
    pub desired_direction: [f64; 3],
    pub start_position: [f64; 3],
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    pub fn new(control_step: f64, desired_direction: [f64; 3], start_position: [f64; 3]) -> Self {
        Self {
            control_step,
            desired_direction,
            start_position,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.rows.len() as f64 * self.control_step
    }

    pub fn total_return(&self) -> f64 {
        self.rows.iter().map(|r| r.reward).sum()
    }

    /// Hash of every logged bit; equal traces hash equal within a build.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        h.write_u64(self.control_step.to_bits());
        for r in &self.rows {
            h.write_usize(r.step);
            for v in [
                r.time,
                r.base_x,
                r.base_y,
                r.base_z,
                r.roll,
                r.pitch,
                r.mechanical_power,
                r.reward,
            ]
            .iter()
            .chain(&r.action)
            .chain(&r.torques)
            {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    /// One row per control step.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["step", "time", "base_x", "base_y", "base_z", "roll", "pitch"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        header.extend((0..ACTION_DIM).map(|i| format!("action_{i}")));
        header.extend((0..NUM_MOTORS).map(|i| format!("torque_{i}")));
        header.push("mechanical_power".into());
        header.push("reward".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string()];
            rec.extend(
                [r.time, r.base_x, r.base_y, r.base_z, r.roll, r.pitch]
                    .iter()
                    .chain(&r.action)
                    .chain(&r.torques)
                    .chain([r.mechanical_power, r.reward].iter())
                    .map(|v| v.to_string()),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Everything except the rows.
    pub fn write_metadata_json(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "control_step": self.control_step,
            "desired_direction": self.desired_direction,
            "start_position": self.start_position,
            "steps": self.rows.len(),
            "total_return": self.total_return(),
        });
        std::fs::write(path, serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

/// A running episode.
#[derive(Clone, Debug)]
pub struct Env {
    config: EnvConfig,
    params: DynamicsParams,
    state: RobotState,
    observations: LatencyBuffer,
    motor_history: LatencyBuffer,
    rng: ChaCha8Rng,
    perturbation_seed: u64,
    substeps_per_control: usize,
    substeps_elapsed: u64,
    step_count: usize,
    done: bool,
    trace: Option<EpisodeTrace>,
}

/// Starts an episode.
pub fn reset(config: &EnvConfig, seed: u64) -> Result<(Env, Vec<f64>)> {
    Env::reset(config, seed)
}

impl Env {
    pub fn reset(config: &EnvConfig, seed: u64) -> Result<(Self, Vec<f64>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = if config.randomize {
            sample_params(&config.ranges, &config.params, &mut rng)
        } else {
            config.params.clone()
        };
        let perturbation_seed = rng.next_u64();

        let center: [f64; ACTION_DIM] = std::array::from_fn(|i| config.feedback_bounds(i).center());
        let pose = compose_action(0.0, &center, config);
        let mut angles = action_to_motor_targets(&pose);
        let limits = params.joint_limits;
        for q in &mut angles {
            let jitter = config.init_jitter * (2.0 * rng.random::<f64>() - 1.0);
            *q = (*q + jitter).clamp(limits.lower, limits.upper);
        }
        let height = standing_height(&angles, &params);
        let state = RobotState::at_rest(Vector3::new(0.0, 0.0, height), angles);

        let (latency, pd_latency) = if config.latency_model {
            (params.latency, params.pd_latency)
        } else {
            (0.0, 0.0)
        };
        let mut observations = LatencyBuffer::for_latency(latency, config.substep);
        let mut motor_history = LatencyBuffer::for_latency(pd_latency, config.substep);
        observations.record(0.0, raw_observation(&state, config.observation_space))?;
        motor_history.record(0.0, motor_snapshot(&state))?;
        let substeps_per_control = ((params.control_step / config.substep).round() as usize).max(1);

        let mut env = Self {
            config: config.clone(),
            params,
            state,
            observations,
            motor_history,
            rng,
            perturbation_seed,
            substeps_per_control,
            substeps_elapsed: 0,
            step_count: 0,
            done: false,
            trace: None,
        };
        let first = env.observe()?;
        Ok((env, first))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// The parameters in effect for this episode.
    pub fn params(&self) -> &DynamicsParams {
        &self.params
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Realized control period.
    pub fn control_dt(&self) -> f64 {
        self.substeps_per_control as f64 * self.config.substep
    }

    pub fn time(&self) -> f64 {
        self.substeps_elapsed as f64 * self.config.substep
    }

    pub fn record_trace(&mut self) {
        let p = self.state.base_position;
        self.trace = Some(EpisodeTrace::new(
            self.control_dt(),
            self.config.desired_direction,
            [p.x, p.y, p.z],
        ));
    }

    pub fn trace(&self) -> Option<&EpisodeTrace> {
        self.trace.as_ref()
    }

    pub fn take_trace(&mut self) -> Option<EpisodeTrace> {
        self.trace.take()
    }

    fn effective_latency(&self) -> (f64, f64) {
        if self.config.latency_model {
            (self.params.latency, self.params.pd_latency)
        } else {
            (0.0, 0.0)
        }
    }

    fn observe(&mut self) -> Result<Vec<f64>> {
        let (latency, _) = self.effective_latency();
        let delayed = self.observations.delayed(self.time(), latency)?;
        Ok(apply_imu_corruption(
            &delayed,
            self.params.imu_bias,
            self.params.imu_noise_std,
            &mut self.rng,
        ))
    }

    fn motor_torques(&self, targets: &[f64; NUM_MOTORS]) -> Result<[f64; NUM_MOTORS]> {
        let cfg = &self.config;
        let p = &self.params;
        let mut tau = [0.0; NUM_MOTORS];
        match cfg.actuator {
            ActuatorKind::Improved => {
                let (_, pd_latency) = self.effective_latency();
                let seen = self.motor_history.delayed(self.time(), pd_latency)?;
                for m in 0..NUM_MOTORS {
                    let cmd = MotorCommand::position(targets[m], cfg.kp, cfg.kd);
                    let v = pd_pwm(&cmd, seen[m], seen[NUM_MOTORS + m], p.battery_voltage);
                    tau[m] = dc_motor_torque(
                        v,
                        self.state.motor_velocities[m],
                        p.torque_constant,
                        p.armature_resistance,
                        &p.torque_curve,
                        p.motor_strength_scale,
                    );
                }
            }
            ActuatorKind::Baseline => {
                let inertia = p.rotor_inertia();
                for m in 0..NUM_MOTORS {
                    let cmd = MotorCommand::position(targets[m], cfg.kp, cfg.kd);
                    tau[m] = constraint_actuator_torque(
                        &cmd,
                        self.state.motor_angles[m],
                        self.state.motor_velocities[m],
                        inertia,
                        cfg.substep,
                        cfg.baseline_torque_limit,
                    );
                }
            }
        }
        Ok(tau)
    }

    /// Advances one control step with the given feedback action (radians).
    pub fn step(&mut self, feedback: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        if feedback.len() != ACTION_DIM {
            return Err(Error::Dimension {
                expected: ACTION_DIM,
                got: feedback.len(),
            });
        }
        if feedback.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                field: "feedback_action",
            });
        }
        let feedback: [f64; ACTION_DIM] = std::array::from_fn(|i| feedback[i]);
        let t0 = self.time();
        let action = compose_action(t0, &feedback, &self.config);
        let targets = action_to_motor_targets(&action);
        let push = perturbation_for_step(self.step_count, self.perturbation_seed, &self.config.perturbation);
        let p_prev = self.state.base_position;
        let dt = self.config.substep;

        let mut energy = 0.0;
        let mut reward_energy = 0.0;
        let mut torques = [0.0; NUM_MOTORS];
        let mut contacts = Default::default();
        for _ in 0..self.substeps_per_control {
            torques = self.motor_torques(&targets)?;
            let (next, c) = step_dynamics_with_contacts(&self.state, &torques, push, &self.params, dt)?;
            self.state = next;
            contacts = c;
            energy += dt * mechanical_power(&torques, &self.state.motor_velocities);
            reward_energy += dt * self.config.energy_term.power(&torques, &self.state.motor_velocities);
            self.substeps_elapsed += 1;
            let t = self.time();
            self.state.time = t;
            self.motor_history.record(t, motor_snapshot(&self.state))?;
            self.observations
                .record(t, raw_observation(&self.state, self.config.observation_space))?;
        }
        self.step_count += 1;

        let control_dt = self.control_dt();
        let power = energy / control_dt;
        let d = Vector3::from(self.config.desired_direction);
        let r = reward_from_power(
            &self.state.base_position,
            &p_prev,
            &d,
            reward_energy / control_dt,
            control_dt,
            self.config.reward_weight,
        );
        self.done = self.step_count >= self.config.episode_cap || base_tilt(&self.state) > self.config.tilt_limit;
        let observation = self.observe()?;
        let pos = self.state.base_position;
        let info = StepInfo {
            base_position: [pos.x, pos.y, pos.z],
            torques,
            motor_velocities: self.state.motor_velocities,
            foot_contacts: contacts.foot_contact_flags(),
            mechanical_power: power,
            perturbed: push.is_some(),
        };
        let time = self.time();
        if let Some(trace) = self.trace.as_mut() {
            let (roll, pitch) = self.state.roll_pitch();
            trace.rows.push(TraceRow {
                step: self.step_count - 1,
                time,
                base_x: pos.x,
                base_y: pos.y,
                base_z: pos.z,
                roll,
                pitch,
                action,
                torques,
                mechanical_power: power,
                reward: r,
            });
        }
        Ok(StepResult {
            observation,
            reward: r,
            done: self.done,
            info,
        })
    }
}

/// Convenience wrapper around [`Env::step`].
pub fn env_step(env: &mut Env, feedback: &[f64]) -> Result<StepResult> {
    env.step(feedback)
}

fn raw_observation(state: &RobotState, space: ObservationSpace) -> Vec<f64> {
    let (roll, pitch) = state.roll_pitch();
    let w = state.body_angular_velocity();
    let mut obs = Vec::with_capacity(space.dim());
    obs.extend_from_slice(&[roll, pitch, w.x, w.y]);
    if space == ObservationSpace::Large {
        obs.extend_from_slice(&state.motor_angles);
    }
    obs
}

fn motor_snapshot(state: &RobotState) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * NUM_MOTORS);
    v.extend_from_slice(&state.motor_angles);
    v.extend_from_slice(&state.motor_velocities);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;

    #[test]
    fn trot_signal_values() {
        let a = open_loop_trot(0.0);
        assert_eq!((a[0], a[1]), (0.0, 2.0));
        assert_relative_eq!(a[2], 0.0, epsilon = 1e-12);
        assert_relative_eq!(a[3], 2.0, epsilon = 1e-12);
        let a = open_loop_trot(0.125);
        assert_relative_eq!(a[0], 0.3, epsilon = 1e-12);
        assert_relative_eq!(a[1], 2.35, epsilon = 1e-12);
        assert_relative_eq!(a[6], 0.3, epsilon = 1e-12);
        assert_relative_eq!(a[2], -0.3, epsilon = 1e-12);
        assert_relative_eq!(a[3], 1.65, epsilon = 1e-12);
        assert_relative_eq!(a[4], -0.3, epsilon = 1e-12);
        let b = open_loop_trot(0.125 + 0.5);
        for i in 0..ACTION_DIM {
            assert_relative_eq!(a[i], b[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn compose_modes() {
        let gallop = EnvConfig::gallop();
        let f = [0.1, 1.6, -0.7, 1.0, 0.2, 2.5, 0.0, 1.5];
        let a = compose_action(0.3, &f, &gallop);
        assert_eq!(a[0], 0.1);
        assert_eq!(a[2], -0.5);
        assert_eq!(a[3], FRAC_PI_2 - 0.5);
        assert_eq!(a[5], FRAC_PI_2 + 0.5);

        let pinned = EnvConfig::trot().open_loop_only();
        assert_eq!(compose_action(0.1, &f, &pinned), open_loop_trot(0.1));

        let trot = EnvConfig::trot();
        let mut fb = [0.0; ACTION_DIM];
        fb[0] = 1.0;
        let a = compose_action(0.0, &fb, &trot);
        assert_relative_eq!(a[0], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn reward_hand_case() {
        let p0 = Vector3::zeros();
        let p1 = Vector3::new(0.01, 0.0, 0.0);
        let d = Vector3::x();
        let tau = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let qd = [10.0, -10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let r = reward(&p1, &p0, &d, &tau, &qd, 0.006, 0.008);
        assert!((r - 0.00904).abs() < 1e-12);
        assert_eq!(reward(&p0, &p0, &d, &[0.0; 8], &[0.0; 8], 0.006, 0.008), 0.0);
    }

    #[test]
    fn energy_term_readings() {
        let tau = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let qd = [10.0, -10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(EnergyTerm::PerMotor.power(&tau, &qd), 20.0);
        assert_eq!(EnergyTerm::Net.power(&tau, &qd), 0.0);
        let qd = [10.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(EnergyTerm::Net.power(&tau, &qd), 20.0);
        assert_eq!(EnvConfig::default().energy_term, EnergyTerm::PerMotor);
    }

    #[test]
    fn perturbation_schedule() {
        let cfg = PerturbationConfig::default();
        assert!(perturbation_for_step(199, 5, &cfg).is_none());
        let f200 = perturbation_for_step(200, 5, &cfg).unwrap();
        assert_eq!(perturbation_for_step(209, 5, &cfg), Some(f200));
        assert!(perturbation_for_step(210, 5, &cfg).is_none());
        assert!(perturbation_for_step(5, 5, &cfg).is_none());
        let f400 = perturbation_for_step(400, 5, &cfg).unwrap();
        assert_ne!(f200, f400);
        assert!((130.0..=220.0).contains(&f200.norm()));
        let off = PerturbationConfig { enabled: false, ..cfg };
        assert!(perturbation_for_step(200, 5, &off).is_none());
    }

    #[test]
    fn reset_dimensions_and_determinism() {
        let mut cfg = EnvConfig::trot();
        cfg.randomize = false;
        let (_, o1) = reset(&cfg, 7).unwrap();
        let (_, o2) = reset(&cfg, 7).unwrap();
        assert_eq!(o1.len(), 4);
        assert_eq!(o1, o2);
        let (_, o3) = reset(&EnvConfig::gallop(), 7).unwrap();
        assert_eq!(o3.len(), 12);
    }

    #[test]
    fn randomized_reset_samples_latency() {
        let cfg = EnvConfig::trot();
        let (a, _) = reset(&cfg, 1).unwrap();
        let (b, _) = reset(&cfg, 2).unwrap();
        assert_ne!(a.params().latency, b.params().latency);
        for e in [&a, &b] {
            assert!((0.0..=0.040).contains(&e.params().latency));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = EnvConfig::trot();
        cfg.desired_direction = [1.0, 1.0, 0.0];
        assert!(matches!(reset(&cfg, 0), Err(Error::Config(_))));
        let mut cfg = EnvConfig::gallop();
        cfg.swing_bounds = Bounds::new(0.2, 0.2);
        assert!(reset(&cfg, 0).is_err());
    }

    #[test]
    fn tilted_robot_terminates() {
        let mut cfg = EnvConfig::trot();
        cfg.randomize = false;
        let (mut env, _) = reset(&cfg, 0).unwrap();
        env.state.base_orientation = UnitQuaternion::from_euler_angles(0.6, 0.0, 0.0);
        env.state.base_position.z += 0.3;
        let r = env.step(&[0.0; ACTION_DIM]).unwrap();
        assert!(r.done);
        assert!(matches!(env.step(&[0.0; ACTION_DIM]), Err(Error::EpisodeDone)));
    }

    #[test]
    fn wrong_action_length_rejected() {
        let (mut env, _) = reset(&EnvConfig::trot(), 0).unwrap();
        assert!(matches!(
            env.step(&[0.0; 3]),
            Err(Error::Dimension { expected: 8, got: 3 })
        ));
    }
}
