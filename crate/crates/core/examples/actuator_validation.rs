//! Compares the DC-motor actuator with the constraint actuator on a single
//! rotor tracking a 1 Hz sine, and prints the torque-current curve.
//!
//! cargo run --release --example actuator_validation

use std::f64::consts::PI;

use sim2real::actuator::{constraint_actuator_torque, dc_motor_torque, pd_pwm, MotorCommand, RotorBench};
use sim2real::dynamics::DynamicsParams;
use sim2real::env::EnvConfig;

fn main() {
    let params = DynamicsParams::default();
    let env = EnvConfig::default();
    let inertia = params.rotor_inertia();
    let dt = env.substep;
    let control_steps = (params.control_step / dt).round() as usize;

    let mut motor = RotorBench::new(inertia, params.motor_friction_torque);
    let mut constraint = RotorBench::new(inertia, params.motor_friction_torque);
    println!("time,target,dc_motor,constraint");
    for k in 0..3000 {
        let t = k as f64 * dt;
        let target = 0.5 * (2.0 * PI * t).sin();
        let cmd = MotorCommand::position(target, env.kp, env.kd);
        let v = pd_pwm(&cmd, motor.angle, motor.velocity, params.battery_voltage);
        let tau = dc_motor_torque(
            v,
            motor.velocity,
            params.torque_constant,
            params.armature_resistance,
            &params.torque_curve,
            params.motor_strength_scale,
        );
        motor.step(tau, dt);
        let tau = constraint_actuator_torque(
            &cmd,
            constraint.angle,
            constraint.velocity,
            inertia,
            dt,
            env.baseline_torque_limit,
        );
        constraint.step(tau, dt);
        if k % control_steps == 0 {
            println!("{t:.3},{target:.5},{:.5},{:.5}", motor.angle, constraint.angle);
        }
    }

    eprintln!("\ncurrent_A torque_Nm (linear {:.4} Nm/A)", params.torque_constant);
    for i in 0..=10 {
        let current = 5.0 * i as f64;
        eprintln!("{current:9.1} {:9.4}", params.torque_curve.lookup(current));
    }
}
