//! Motor models: the leg/motor space map, the DC motor driven by a PD-to-PWM
//! servo with torque saturation, and the constraint-style position actuator
//! used as the baseline simulator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position command for one motor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotorCommand {
    pub desired_angle: f64,
    /// Always zero for the built-in controllers.
    pub desired_velocity: f64,
    pub kp: f64,
    pub kd: f64,
}

impl MotorCommand {
    pub fn position(desired_angle: f64, kp: f64, kd: f64) -> Self {
        Self {
            desired_angle,
            desired_velocity: 0.0,
            kp,
            kd,
        }
    }
}

/// Piecewise-linear torque as a function of armature current magnitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorqueCurrentCurve {
    /// `(current A, torque Nm)` knots starting at `(0, 0)`.
    pub knots: Vec<(f64, f64)>,
}

impl TorqueCurrentCurve {
    /// Ideal motor: `torque = kt * current` up to a very large current.
    pub fn linear(kt: f64) -> Self {
        Self {
            knots: vec![(0.0, 0.0), (1.0e4, 1.0e4 * kt)],
        }
    }

    /// Slope `kt` to 20 A, `kt / 4` to 40 A, flat beyond.
    pub fn saturating(kt: f64) -> Self {
        let knee = 20.0 * kt;
        Self {
            knots: vec![(0.0, 0.0), (20.0, knee), (40.0, knee + 20.0 * kt / 4.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 || self.knots[0] != (0.0, 0.0) {
            return Err(Error::Config(
                "torque curve needs at least two knots starting at (0, 0)".into(),
            ));
        }
        for w in self.knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Config("torque curve currents must strictly increase".into()));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::Config("torque curve torques must not decrease".into()));
            }
        }
        Ok(())
    }

    pub fn initial_slope(&self) -> f64 {
        let (i, t) = self.knots[1];
        t / i
    }

    pub fn max_torque(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.1)
    }

    /// Torque for a non-negative current; clamped at the last knot.
    pub fn lookup(&self, current: f64) -> f64 {
        let current = current.abs();
        for w in self.knots.windows(2) {
            let ((i0, t0), (i1, t1)) = (w[0], w[1]);
            if current <= i1 {
                return t0 + (t1 - t0) * (current - i0) / (i1 - i0);
            }
        }
        self.max_torque()
    }
}

/// `(swing, extension)` to the two motor angles of one leg.
pub fn leg_to_motor(swing: f64, extension: f64) -> (f64, f64) {
    (extension + swing, extension - swing)
}

/// Inverse of [`leg_to_motor`].
pub fn motor_to_leg(theta1: f64, theta2: f64) -> (f64, f64) {
    ((theta1 - theta2) / 2.0, (theta1 + theta2) / 2.0)
}

/// PD servo output voltage, clamped to the supply.
pub fn pd_pwm(cmd: &MotorCommand, angle: f64, velocity: f64, battery_voltage: f64) -> f64 {
    let raw = battery_voltage * (cmd.kp * (cmd.desired_angle - angle) + cmd.kd * (cmd.desired_velocity - velocity));
    raw.clamp(-battery_voltage, battery_voltage)
}

/// Armature current for a PWM voltage against back EMF.
pub fn armature_current(v_pwm: f64, velocity: f64, kt: f64, resistance: f64) -> f64 {
    (v_pwm - kt * velocity) / resistance
}

/// DC motor output torque with the saturating torque-current curve.
pub fn dc_motor_torque(
    v_pwm: f64,
    velocity: f64,
    kt: f64,
    resistance: f64,
    curve: &TorqueCurrentCurve,
    strength_scale: f64,
) -> f64 {
    let current = armature_current(v_pwm, velocity, kt, resistance);
    let magnitude = strength_scale * curve.lookup(current.abs());
    if current < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

/// Torque that satisfies `kp (q_des - q') + kd (qd_des - qd') = 0` at the end
/// of the step for an isolated rotor integrated with semi-implicit Euler.
pub fn constraint_actuator_torque(
    cmd: &MotorCommand,
    angle: f64,
    velocity: f64,
    rotor_inertia: f64,
    dt: f64,
    torque_limit: Option<f64>,
) -> f64 {
    let denom = cmd.kp * dt + cmd.kd;
    if denom <= 0.0 {
        return 0.0;
    }
    let target_velocity = (cmd.kp * (cmd.desired_angle - angle) + cmd.kd * cmd.desired_velocity) / denom;
    let torque = rotor_inertia * (target_velocity - velocity) / dt;
    match torque_limit {
        Some(limit) => torque.clamp(-limit, limit),
        None => torque,
    }
}

/// Which actuator model drives the simulated motors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuatorKind {
    /// DC motor with PD-to-PWM servo and torque saturation.
    #[default]
    Improved,
    /// Constraint-based position control.
    Baseline,
}

/// A single unloaded rotor; the bench for actuator validation and latency
/// calibration.
#[derive(Clone, Debug, PartialEq)]
pub struct RotorBench {
    pub angle: f64,
    pub velocity: f64,
    pub inertia: f64,
    pub friction_torque: f64,
}

impl RotorBench {
    pub fn new(inertia: f64, friction_torque: f64) -> Self {
        Self {
            angle: 0.0,
            velocity: 0.0,
            inertia,
            friction_torque,
        }
    }

    /// Semi-implicit Euler step with Coulomb friction resolved against the
    /// end-of-step velocity.
    pub fn step(&mut self, torque: f64, dt: f64) {
        let free = self.velocity + torque * dt / self.inertia;
        let max_change = self.friction_torque * dt / self.inertia;
        self.velocity = if free.abs() <= max_change {
            0.0
        } else {
            free - max_change * free.signum()
        };
        self.angle += self.velocity * dt;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn leg_motor_examples() {
        let (t1, t2) = leg_to_motor(0.2, 1.8);
        assert_relative_eq!(t1, 2.0, epsilon = 1e-12);
        assert_relative_eq!(t2, 1.6, epsilon = 1e-12);
        assert_eq!(leg_to_motor(0.0, 0.0), (0.0, 0.0));
        let (s, e) = motor_to_leg(2.0, 1.6);
        assert_relative_eq!(s, 0.2, epsilon = 1e-12);
        assert_relative_eq!(e, 1.8, epsilon = 1e-12);
        assert_eq!(motor_to_leg(0.7, 0.7), (0.0, 0.7));
        assert_eq!(motor_to_leg(0.5, -0.5), (0.5, 0.0));
    }

    #[test]
    fn pd_pwm_examples() {
        let cmd = MotorCommand::position(1.0, 1.0, 0.02);
        assert_relative_eq!(pd_pwm(&cmd, 0.5, 0.0, 16.0), 8.0, epsilon = 1e-12);
        assert_eq!(pd_pwm(&cmd, 1.0, 0.0, 16.0), 0.0);
        let cmd = MotorCommand::position(2.0, 1.0, 0.0);
        assert_eq!(pd_pwm(&cmd, 0.0, 0.0, 16.0), 16.0);
        assert_eq!(pd_pwm(&MotorCommand::position(-2.0, 1.0, 0.0), 0.0, 0.0, 16.0), -16.0);
    }

    #[test]
    fn dc_motor_examples() {
        let linear = TorqueCurrentCurve::linear(0.1);
        assert_relative_eq!(dc_motor_torque(8.0, 10.0, 0.1, 0.2, &linear, 1.0), 3.5, epsilon = 1e-9);
        assert_eq!(dc_motor_torque(1.0, 10.0, 0.1, 0.2, &linear, 1.0), 0.0);
        let curve = TorqueCurrentCurve {
            knots: vec![(0.0, 0.0), (20.0, 2.0), (40.0, 2.5)],
        };
        assert_relative_eq!(curve.lookup(30.0), 2.25, epsilon = 1e-12);
        assert_relative_eq!(curve.lookup(100.0), 2.5);
        // odd in current
        assert_relative_eq!(
            dc_motor_torque(-6.0, 0.0, 0.1, 0.2, &curve, 1.0),
            -curve.lookup(30.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn saturating_curve_is_valid() {
        let kt = 0.0954;
        let c = TorqueCurrentCurve::saturating(kt);
        c.validate().unwrap();
        assert!((c.initial_slope() - kt).abs() < 1e-9);
        assert_relative_eq!(c.lookup(40.0), 20.0 * kt * 1.25, epsilon = 1e-12);
    }

    #[test]
    fn malformed_curves_rejected() {
        let bad = TorqueCurrentCurve {
            knots: vec![(0.0, 0.0), (10.0, 1.0), (10.0, 2.0)],
        };
        assert!(bad.validate().is_err());
        let bad = TorqueCurrentCurve {
            knots: vec![(0.0, 0.0), (10.0, 1.0), (20.0, 0.5)],
        };
        assert!(bad.validate().is_err());
        let bad = TorqueCurrentCurve {
            knots: vec![(1.0, 0.0), (10.0, 1.0)],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn constraint_actuator_zero_at_target() {
        let cmd = MotorCommand::position(0.4, 1.2, 0.02);
        assert_eq!(constraint_actuator_torque(&cmd, 0.4, 0.0, 0.004, 0.001, None), 0.0);
    }

    #[test]
    fn constraint_actuator_satisfies_end_of_step_constraint() {
        let cmd = MotorCommand::position(0.7, 1.2, 0.02);
        let (inertia, dt) = (0.004, 0.006);
        let mut rotor = RotorBench::new(inertia, 0.0);
        rotor.angle = 0.1;
        rotor.velocity = -0.3;
        let tau = constraint_actuator_torque(&cmd, rotor.angle, rotor.velocity, inertia, dt, None);
        rotor.step(tau, dt);
        let e = cmd.kp * (cmd.desired_angle - rotor.angle) + cmd.kd * (0.0 - rotor.velocity);
        assert!(e.abs() < 1e-9, "constraint residual {e}");
    }

    #[test]
    fn rotor_bench_friction_holds_small_torque() {
        let mut r = RotorBench::new(0.004, 0.05);
        r.step(0.02, 0.001);
        assert_eq!(r.velocity, 0.0);
        r.step(1.0, 0.001);
        assert!(r.velocity > 0.0);
    }
}
