//! Rigid-body model of a Minitaur-like quadruped.
//!
//! The base is a single 6-DoF rigid box. Each leg is massless and driven by two
//! rotors whose inertia lumps in the leg links; its foot follows the linear
//! radius map `r(e)` rotated by the swing angle about the hip pitch axis. Feet
//! and body corners touch a flat ground plane through penalty springs with
//! compression damping and regularized Coulomb friction.
//!
//! Integration is semi-implicit Euler: velocities are advanced first (with the
//! dissipative contact and motor-friction terms resolved against the end-of-step
//! velocity), then positions are advanced with the new velocities.

use nalgebra::{Matrix2, Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::actuator::TorqueCurrentCurve;
use crate::error::{Error, Result};

pub const NUM_LEGS: usize = 4;
pub const NUM_MOTORS: usize = 8;

/// Leg order used everywhere: front-left, back-left, front-right, back-right.
pub const LEG_NAMES: [&str; NUM_LEGS] = ["front_left", "back_left", "front_right", "back_right"];

const SOLVER_SWEEPS: usize = 8;

/// Full simulator state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub base_position: Vector3<f64>,
    pub base_orientation: UnitQuaternion<f64>,
    pub base_linear_velocity: Vector3<f64>,
    /// World frame.
    pub base_angular_velocity: Vector3<f64>,
    pub motor_angles: [f64; NUM_MOTORS],
    pub motor_velocities: [f64; NUM_MOTORS],
    pub time: f64,
}

impl RobotState {
    /// Robot at rest with identity orientation.
    pub fn at_rest(base_position: Vector3<f64>, motor_angles: [f64; NUM_MOTORS]) -> Self {
        Self {
            base_position,
            base_orientation: UnitQuaternion::identity(),
            base_linear_velocity: Vector3::zeros(),
            base_angular_velocity: Vector3::zeros(),
            motor_angles,
            motor_velocities: [0.0; NUM_MOTORS],
            time: 0.0,
        }
    }

    /// `(roll, pitch)` of the base.
    pub fn roll_pitch(&self) -> (f64, f64) {
        let (roll, pitch, _) = self.base_orientation.euler_angles();
        (roll, pitch)
    }

    /// Angular velocity expressed in the base frame, as a gyroscope reads it.
    pub fn body_angular_velocity(&self) -> Vector3<f64> {
        self.base_orientation
            .inverse_transform_vector(&self.base_angular_velocity)
    }

    fn check_finite(&self) -> Result<()> {
        let finite3 = |v: &Vector3<f64>| v.iter().all(|x| x.is_finite());
        if !finite3(&self.base_position) {
            return Err(Error::Diverged { field: "base_position" });
        }
        if !self.base_orientation.coords.iter().all(|x| x.is_finite()) {
            return Err(Error::Diverged {
                field: "base_orientation",
            });
        }
        if !finite3(&self.base_linear_velocity) {
            return Err(Error::Diverged {
                field: "base_linear_velocity",
            });
        }
        if !finite3(&self.base_angular_velocity) {
            return Err(Error::Diverged {
                field: "base_angular_velocity",
            });
        }
        if !self.motor_angles.iter().all(|x| x.is_finite()) {
            return Err(Error::Diverged { field: "motor_angles" });
        }
        if !self.motor_velocities.iter().all(|x| x.is_finite()) {
            return Err(Error::Diverged {
                field: "motor_velocities",
            });
        }
        if !self.time.is_finite() {
            return Err(Error::Diverged { field: "time" });
        }
        Ok(())
    }
}

/// Linear leg-length map and swing reference direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegGeometry {
    pub r_min: f64,
    pub r_max: f64,
    /// Extension producing `r_min`.
    pub e_min: f64,
    /// Extension producing `r_max`.
    pub e_max: f64,
    /// Body-frame direction of the leg at zero swing.
    pub swing_zero_axis: [f64; 3],
}

impl Default for LegGeometry {
    fn default() -> Self {
        Self {
            r_min: 0.08,
            r_max: 0.28,
            e_min: 0.5,
            e_max: 3.0,
            swing_zero_axis: [0.0, 0.0, -1.0],
        }
    }
}

impl LegGeometry {
    pub fn radius_slope(&self) -> f64 {
        (self.r_max - self.r_min) / (self.e_max - self.e_min)
    }
}

/// Base box dimensions and hip locations (body frame, meters).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyGeometry {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub hip_offsets: [[f64; 3]; NUM_LEGS],
}

impl Default for BodyGeometry {
    fn default() -> Self {
        Self {
            length: 0.54,
            width: 0.2,
            height: 0.1,
            hip_offsets: [
                [0.2, 0.12, 0.0],
                [-0.2, 0.12, 0.0],
                [0.2, -0.12, 0.0],
                [-0.2, -0.12, 0.0],
            ],
        }
    }
}

/// Per-motor angle limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: f64,
    pub upper: f64,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self { lower: 0.3, upper: 3.3 }
    }
}

/// Every physical parameter the simulator reads, including the ones that the
/// randomizer perturbs per episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsParams {
    pub total_mass_scale: f64,
    /// Base, then the four legs in [`LEG_NAMES`] order. Leg mass is lumped at the hip.
    pub link_masses: [f64; 1 + NUM_LEGS],
    pub inertia_scale: f64,
    pub motor_friction_torque: f64,
    pub motor_strength_scale: f64,
    /// Kt, Nm/A.
    pub torque_constant: f64,
    /// R, ohm.
    pub armature_resistance: f64,
    pub battery_voltage: f64,
    pub torque_curve: TorqueCurrentCurve,
    pub contact_friction_coefficient: f64,
    pub contact_normal_stiffness: f64,
    pub contact_normal_damping: f64,
    /// Tangential speed below which friction is regularized (m/s).
    pub friction_velocity_scale: f64,
    /// Policy-loop sensing latency, seconds.
    pub latency: f64,
    /// Inner PD-loop latency, seconds.
    pub pd_latency: f64,
    pub control_step: f64,
    pub imu_bias: f64,
    pub imu_noise_std: f64,
    pub leg_geometry: LegGeometry,
    pub body: BodyGeometry,
    pub joint_limits: JointLimits,
    pub motor_rotor_inertia: f64,
    pub gravity: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        let torque_constant = 0.0954;
        Self {
            total_mass_scale: 1.0,
            link_masses: [6.4, 0.4, 0.4, 0.4, 0.4],
            inertia_scale: 1.0,
            motor_friction_torque: 0.01,
            motor_strength_scale: 1.0,
            torque_constant,
            armature_resistance: 0.186,
            battery_voltage: 16.0,
            torque_curve: TorqueCurrentCurve::saturating(torque_constant),
            contact_friction_coefficient: 1.0,
            contact_normal_stiffness: 1.0e4,
            contact_normal_damping: 100.0,
            friction_velocity_scale: 1.0e-3,
            latency: 0.015,
            pd_latency: 0.003,
            control_step: 0.006,
            imu_bias: 0.0,
            imu_noise_std: 0.0,
            leg_geometry: LegGeometry::default(),
            body: BodyGeometry::default(),
            joint_limits: JointLimits::default(),
            motor_rotor_inertia: 0.004,
            gravity: 9.81,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("total_mass_scale", self.total_mass_scale),
            ("inertia_scale", self.inertia_scale),
            ("motor_strength_scale", self.motor_strength_scale),
            ("torque_constant", self.torque_constant),
            ("armature_resistance", self.armature_resistance),
            ("battery_voltage", self.battery_voltage),
            ("control_step", self.control_step),
            ("motor_rotor_inertia", self.motor_rotor_inertia),
            ("friction_velocity_scale", self.friction_velocity_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("motor_friction_torque", self.motor_friction_torque),
            ("contact_friction_coefficient", self.contact_friction_coefficient),
            ("contact_normal_stiffness", self.contact_normal_stiffness),
            ("contact_normal_damping", self.contact_normal_damping),
            ("latency", self.latency),
            ("pd_latency", self.pd_latency),
            ("imu_noise_std", self.imu_noise_std),
            ("gravity", self.gravity),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.link_masses.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Config("link masses must be positive".into()));
        }
        let g = &self.leg_geometry;
        if !(g.r_min > 0.0 && g.r_min < g.r_max) {
            return Err(Error::Config(format!(
                "leg geometry needs 0 < r_min < r_max, got {} / {}",
                g.r_min, g.r_max
            )));
        }
        if !(g.e_min < g.e_max) {
            return Err(Error::Config("leg geometry needs e_min < e_max".into()));
        }
        if Vector3::from(g.swing_zero_axis).norm() == 0.0 {
            return Err(Error::Config("swing_zero_axis must be non-zero".into()));
        }
        if !(self.joint_limits.lower < self.joint_limits.upper) {
            return Err(Error::Config("joint limits need lower < upper".into()));
        }
        self.torque_curve.validate()?;
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass_scale * self.link_masses.iter().sum::<f64>()
    }

    /// Body-frame inertia of the base with leg masses lumped at the hips.
    pub fn body_inertia(&self) -> Matrix3<f64> {
        let b = &self.body;
        let m = self.link_masses[0];
        let (l2, w2, h2) = (b.length * b.length, b.width * b.width, b.height * b.height);
        let mut inertia = Matrix3::from_diagonal(&Vector3::new(
            m / 12.0 * (w2 + h2),
            m / 12.0 * (l2 + h2),
            m / 12.0 * (l2 + w2),
        ));
        for (leg, hip) in b.hip_offsets.iter().enumerate() {
            let h = Vector3::from(*hip);
            let ml = self.link_masses[1 + leg];
            inertia += ml * (Matrix3::identity() * h.norm_squared() - h * h.transpose());
        }
        inertia * (self.total_mass_scale * self.inertia_scale)
    }

    pub fn rotor_inertia(&self) -> f64 {
        self.motor_rotor_inertia * self.inertia_scale
    }
}

/// Foot placement in the hip frame plus its partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FootKinematics {
    pub position: Vector3<f64>,
    pub radius: f64,
    /// d position / d swing.
    pub d_swing: Vector3<f64>,
    /// d position / d extension (zero when the extension was clamped).
    pub d_extension: Vector3<f64>,
    /// Set when the extension fell outside `[e_min, e_max]` and was clamped.
    pub clamped: bool,
}

/// Foot position for a leg pose `(swing, extension)` in the hip frame.
pub fn leg_forward_kinematics(swing: f64, extension: f64, params: &DynamicsParams) -> FootKinematics {
    let g = &params.leg_geometry;
    let clamped = extension < g.e_min || extension > g.e_max;
    let e = extension.clamp(g.e_min, g.e_max);
    let radius = g.r_min + (g.r_max - g.r_min) * (e - g.e_min) / (g.e_max - g.e_min);
    let zero = Vector3::from(g.swing_zero_axis).normalize();
    // positive swing moves the foot backward (-x)
    let rotation = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), swing);
    let direction = rotation * zero;
    let position = direction * radius;
    let d_extension = if clamped {
        Vector3::zeros()
    } else {
        direction * g.radius_slope()
    };
    FootKinematics {
        position,
        radius,
        d_swing: Vector3::y().cross(&position),
        d_extension,
        clamped,
    }
}

fn leg_pose(motor_angles: &[f64; NUM_MOTORS], leg: usize) -> (f64, f64) {
    let (t1, t2) = (motor_angles[2 * leg], motor_angles[2 * leg + 1]);
    ((t1 - t2) / 2.0, (t1 + t2) / 2.0)
}

/// Force and penetration at one contact point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointContact {
    pub in_contact: bool,
    pub penetration_depth: f64,
    pub normal_force: f64,
    pub friction_force: Vector2<f64>,
}

/// Contact forces on the four feet and the eight corners of the base box.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactState {
    pub feet: [PointContact; NUM_LEGS],
    pub body: [PointContact; 8],
}

impl ContactState {
    pub fn total_normal_force(&self) -> f64 {
        self.feet.iter().chain(self.body.iter()).map(|c| c.normal_force).sum()
    }

    pub fn foot_contact_flags(&self) -> [bool; NUM_LEGS] {
        std::array::from_fn(|i| self.feet[i].in_contact)
    }
}

/// Geometry of a contact point: world offset from the base origin and, for
/// feet, the world-frame velocity columns of its two motors.
#[derive(Clone, Copy, Debug)]
struct ContactPoint {
    offset: Vector3<f64>,
    height: f64,
    motors: Option<(usize, Vector3<f64>, Vector3<f64>)>,
}

fn contact_points(state: &RobotState, params: &DynamicsParams) -> [ContactPoint; NUM_LEGS + 8] {
    let rot = &state.base_orientation;
    let body = &params.body;
    let mut points = [ContactPoint {
        offset: Vector3::zeros(),
        height: 0.0,
        motors: None,
    }; NUM_LEGS + 8];
    for (leg, point) in points.iter_mut().take(NUM_LEGS).enumerate() {
        let (s, e) = leg_pose(&state.motor_angles, leg);
        let fk = leg_forward_kinematics(s, e, params);
        let local = Vector3::from(body.hip_offsets[leg]) + fk.position;
        let offset = rot * local;
        // theta1 = e + s, theta2 = e - s
        let c1 = rot * ((fk.d_swing + fk.d_extension) * 0.5);
        let c2 = rot * ((fk.d_extension - fk.d_swing) * 0.5);
        *point = ContactPoint {
            offset,
            height: state.base_position.z + offset.z,
            motors: Some((2 * leg, c1, c2)),
        };
    }
    let half = Vector3::new(body.length, body.width, body.height) * 0.5;
    for corner in 0..8 {
        let local = Vector3::new(
            if corner & 1 == 0 { half.x } else { -half.x },
            if corner & 2 == 0 { half.y } else { -half.y },
            if corner & 4 == 0 { half.z } else { -half.z },
        );
        let offset = rot * local;
        points[NUM_LEGS + corner] = ContactPoint {
            offset,
            height: state.base_position.z + offset.z,
            motors: None,
        };
    }
    points
}

fn point_velocity(
    point: &ContactPoint,
    linear: &Vector3<f64>,
    angular: &Vector3<f64>,
    motor_velocities: &[f64; NUM_MOTORS],
) -> Vector3<f64> {
    let mut v = linear + angular.cross(&point.offset);
    if let Some((m, c1, c2)) = point.motors {
        v += c1 * motor_velocities[m] + c2 * motor_velocities[m + 1];
    }
    v
}

fn regularized_friction(tangential_velocity: Vector2<f64>, mu_normal: f64, eps: f64) -> Vector2<f64> {
    let s = (tangential_velocity.norm_squared() + eps * eps).sqrt();
    -tangential_velocity * (mu_normal / s)
}

fn penalty_normal_force(penetration: f64, vertical_velocity: f64, params: &DynamicsParams) -> f64 {
    (params.contact_normal_stiffness * penetration + params.contact_normal_damping * (-vertical_velocity).max(0.0))
        .max(0.0)
}

/// Penalty contact forces evaluated at the current state.
pub fn compute_contacts(state: &RobotState, params: &DynamicsParams) -> ContactState {
    let points = contact_points(state, params);
    let mut out = ContactState::default();
    for (i, point) in points.iter().enumerate() {
        let penetration = -point.height;
        let contact = if penetration > 0.0 {
            let v = point_velocity(
                point,
                &state.base_linear_velocity,
                &state.base_angular_velocity,
                &state.motor_velocities,
            );
            let normal = penalty_normal_force(penetration, v.z, params);
            let friction = regularized_friction(
                Vector2::new(v.x, v.y),
                params.contact_friction_coefficient * normal,
                params.friction_velocity_scale,
            );
            PointContact {
                in_contact: true,
                penetration_depth: penetration,
                normal_force: normal,
                friction_force: friction,
            }
        } else {
            PointContact::default()
        };
        if i < NUM_LEGS {
            out.feet[i] = contact;
        } else {
            out.body[i - NUM_LEGS] = contact;
        }
    }
    out
}

/// Generalized velocities and inverse masses used by the velocity solver.
struct VelocityState {
    linear: Vector3<f64>,
    angular: Vector3<f64>,
    motors: [f64; NUM_MOTORS],
    inv_mass: f64,
    inv_inertia: Matrix3<f64>,
    inv_rotor: f64,
}

impl VelocityState {
    fn point_velocity(&self, point: &ContactPoint) -> Vector3<f64> {
        point_velocity(point, &self.linear, &self.angular, &self.motors)
    }

    fn apply_impulse(&mut self, point: &ContactPoint, impulse: &Vector3<f64>) {
        self.linear += impulse * self.inv_mass;
        self.angular += self.inv_inertia * point.offset.cross(impulse);
        if let Some((m, c1, c2)) = point.motors {
            self.motors[m] += self.inv_rotor * c1.dot(impulse);
            self.motors[m + 1] += self.inv_rotor * c2.dot(impulse);
        }
    }

    /// Point-space inverse mass `J M^-1 J^T`.
    fn point_inverse_mass(&self, point: &ContactPoint) -> Matrix3<f64> {
        let r = point.offset.cross_matrix();
        let mut w = Matrix3::identity() * self.inv_mass + r * self.inv_inertia * r.transpose();
        if let Some((_, c1, c2)) = point.motors {
            w += (c1 * c1.transpose() + c2 * c2.transpose()) * self.inv_rotor;
        }
        w
    }
}

/// Minimizes `1/2 (v-a)^T B^-1 (v-a) + mu_n * sqrt(|v|^2 + eps^2)` with damped
/// Newton, i.e. solves `v = a + B F` with `F = -mu_n v / sqrt(|v|^2 + eps^2)`.
/// Returns the friction force evaluated from the law, so it never leaves the cone.
fn solve_friction(a: Vector2<f64>, b: Matrix2<f64>, mu_n: f64, eps: f64) -> Vector2<f64> {
    if mu_n <= 0.0 {
        return Vector2::zeros();
    }
    let Some(b_inv) = b.try_inverse() else {
        return regularized_friction(a, mu_n, eps);
    };
    let objective = |v: &Vector2<f64>| {
        let d = v - a;
        0.5 * d.dot(&(b_inv * d)) + mu_n * (v.norm_squared() + eps * eps).sqrt()
    };
    let mut v = Vector2::zeros();
    let mut f_v = objective(&v);
    for _ in 0..40 {
        let s = (v.norm_squared() + eps * eps).sqrt();
        let grad = b_inv * (v - a) + v * (mu_n / s);
        let hess = b_inv + (Matrix2::identity() / s - v * v.transpose() / (s * s * s)) * mu_n;
        let Some(h_inv) = hess.try_inverse() else { break };
        let step = -(h_inv * grad);
        let slope = grad.dot(&step);
        if slope >= 0.0 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let candidate = v + step * t;
            let f_c = objective(&candidate);
            if f_c <= f_v + 1e-4 * t * slope {
                v = candidate;
                f_v = f_c;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || (step * t).norm() <= 1e-13 * (1.0 + v.norm()) {
            break;
        }
    }
    regularized_friction(v, mu_n, eps)
}

/// Advances the simulation by one semi-implicit Euler step.
///
/// `motor_torques` are the actuator outputs; motor friction is applied here.
pub fn step_dynamics(
    state: &RobotState,
    motor_torques: &[f64; NUM_MOTORS],
    perturbation: Option<Vector3<f64>>,
    params: &DynamicsParams,
    dt: f64,
) -> Result<RobotState> {
    step_dynamics_with_contacts(state, motor_torques, perturbation, params, dt).map(|(s, _)| s)
}

/// [`step_dynamics`] that also reports the contact forces applied during the step.
pub fn step_dynamics_with_contacts(
    state: &RobotState,
    motor_torques: &[f64; NUM_MOTORS],
    perturbation: Option<Vector3<f64>>,
    params: &DynamicsParams,
    dt: f64,
) -> Result<(RobotState, ContactState)> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    if motor_torques.iter().any(|t| !t.is_finite()) {
        return Err(Error::Diverged { field: "motor_torques" });
    }

    let mass = params.total_mass();
    let rot = state.base_orientation.to_rotation_matrix();
    let inertia_world = rot.matrix() * params.body_inertia() * rot.matrix().transpose();
    let inv_inertia = inertia_world
        .try_inverse()
        .ok_or(Error::Config("base inertia is singular".into()))?;
    let rotor_inertia = params.rotor_inertia();

    // Explicit accelerations.
    let mut accel = Vector3::new(0.0, 0.0, -params.gravity);
    if let Some(p) = perturbation {
        accel += p / mass;
    }
    let omega = state.base_angular_velocity;
    let gyro = -omega.cross(&(inertia_world * omega));

    let mut vel = VelocityState {
        linear: state.base_linear_velocity + accel * dt,
        angular: omega + inv_inertia * gyro * dt,
        motors: std::array::from_fn(|i| state.motor_velocities[i] + motor_torques[i] * dt / rotor_inertia),
        inv_mass: 1.0 / mass,
        inv_inertia,
        inv_rotor: 1.0 / rotor_inertia,
    };

    // Dissipative terms: Gauss-Seidel over contacts and motor friction, each
    // resolved against the end-of-step velocity.
    let points = contact_points(state, params);
    let active: Vec<usize> = (0..points.len()).filter(|&i| points[i].height < 0.0).collect();
    let inverse_masses: Vec<Matrix3<f64>> = active.iter().map(|&i| vel.point_inverse_mass(&points[i])).collect();
    let mut forces = vec![Vector3::<f64>::zeros(); active.len()];
    let mut friction_impulse = [0.0; NUM_MOTORS];
    let max_friction_impulse = params.motor_friction_torque * dt;
    let mu = params.contact_friction_coefficient;
    let eps = params.friction_velocity_scale;

    for _ in 0..SOLVER_SWEEPS {
        for (k, &i) in active.iter().enumerate() {
            let point = &points[i];
            let w = &inverse_masses[k];
            vel.apply_impulse(point, &(-forces[k] * dt));
            let v = vel.point_velocity(point);
            let penetration = -point.height;
            let ft_prev = Vector2::new(forces[k].x, forces[k].y);

            // Normal force with implicit compression damping.
            let vz0 = v.z + dt * (w[(2, 0)] * ft_prev.x + w[(2, 1)] * ft_prev.y);
            let spring = params.contact_normal_stiffness * penetration;
            let vz_spring = vz0 + dt * w[(2, 2)] * spring;
            let normal = if vz_spring < 0.0 {
                (spring - params.contact_normal_damping * vz0) / (1.0 + params.contact_normal_damping * dt * w[(2, 2)])
            } else {
                spring
            }
            .max(0.0);

            let a = Vector2::new(v.x + dt * w[(0, 2)] * normal, v.y + dt * w[(1, 2)] * normal);
            let b = Matrix2::new(w[(0, 0)], w[(0, 1)], w[(1, 0)], w[(1, 1)]) * dt;
            let ft = solve_friction(a, b, mu * normal, eps);

            forces[k] = Vector3::new(ft.x, ft.y, normal);
            vel.apply_impulse(point, &(forces[k] * dt));
        }
        if max_friction_impulse > 0.0 {
            for m in 0..NUM_MOTORS {
                vel.motors[m] -= friction_impulse[m] * vel.inv_rotor;
                let stop = -vel.motors[m] * rotor_inertia;
                friction_impulse[m] = stop.clamp(-max_friction_impulse, max_friction_impulse);
                vel.motors[m] += friction_impulse[m] * vel.inv_rotor;
            }
        }
    }

    let mut contacts = ContactState::default();
    for (k, &i) in active.iter().enumerate() {
        let c = PointContact {
            in_contact: true,
            penetration_depth: -points[i].height,
            normal_force: forces[k].z,
            friction_force: Vector2::new(forces[k].x, forces[k].y),
        };
        if i < NUM_LEGS {
            contacts.feet[i] = c;
        } else {
            contacts.body[i - NUM_LEGS] = c;
        }
    }

    // Positions from the updated velocities.
    let mut next = RobotState {
        base_position: state.base_position + vel.linear * dt,
        base_orientation: UnitQuaternion::new_normalize(
            (UnitQuaternion::from_scaled_axis(vel.angular * dt) * state.base_orientation).into_inner(),
        ),
        base_linear_velocity: vel.linear,
        base_angular_velocity: vel.angular,
        motor_angles: [0.0; NUM_MOTORS],
        motor_velocities: vel.motors,
        time: state.time + dt,
    };
    let limits = params.joint_limits;
    for m in 0..NUM_MOTORS {
        let q = state.motor_angles[m] + vel.motors[m] * dt;
        if q < limits.lower {
            next.motor_angles[m] = limits.lower;
            next.motor_velocities[m] = next.motor_velocities[m].max(0.0);
        } else if q > limits.upper {
            next.motor_angles[m] = limits.upper;
            next.motor_velocities[m] = next.motor_velocities[m].min(0.0);
        } else {
            next.motor_angles[m] = q;
        }
    }
    next.check_finite()?;
    Ok((next, contacts))
}

/// Largest of |roll| and |pitch|.
pub fn base_tilt(state: &RobotState) -> f64 {
    let (roll, pitch) = state.roll_pitch();
    roll.abs().max(pitch.abs())
}

/// Base height that puts the lowest foot on the ground for the given motor
/// angles with identity orientation.
pub fn standing_height(motor_angles: &[f64; NUM_MOTORS], params: &DynamicsParams) -> f64 {
    (0..NUM_LEGS)
        .map(|leg| {
            let (s, e) = leg_pose(motor_angles, leg);
            let fk = leg_forward_kinematics(s, e, params);
            -(params.body.hip_offsets[leg][2] + fk.position.z)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn airborne(params: &DynamicsParams) -> RobotState {
        let angles = [1.5; NUM_MOTORS];
        assert!(standing_height(&angles, params) < 2.0);
        RobotState::at_rest(Vector3::new(0.0, 0.0, 2.0), angles)
    }

    #[test]
    fn fk_endpoints_and_midpoint() {
        let p = DynamicsParams::default();
        let g = &p.leg_geometry;
        let lo = leg_forward_kinematics(0.0, g.e_min, &p);
        assert_relative_eq!(lo.position, Vector3::new(0.0, 0.0, -g.r_min), epsilon = 1e-12);
        let hi = leg_forward_kinematics(0.0, g.e_max, &p);
        assert_relative_eq!(hi.position, Vector3::new(0.0, 0.0, -g.r_max), epsilon = 1e-12);

        let mid = leg_forward_kinematics(0.3, 0.5 * (g.e_min + g.e_max), &p);
        let r = 0.5 * (g.r_min + g.r_max);
        assert_relative_eq!(mid.radius, r, epsilon = 1e-12);
        // angle from straight down
        let angle = (-mid.position.x).atan2(-mid.position.z);
        assert_relative_eq!(angle, 0.3, epsilon = 1e-12);
        assert_relative_eq!(mid.position.norm(), r, epsilon = 1e-12);
        assert!(!mid.clamped);
    }

    #[test]
    fn fk_clamps_out_of_range_extension() {
        let p = DynamicsParams::default();
        let fk = leg_forward_kinematics(0.0, p.leg_geometry.e_max + 1.0, &p);
        assert!(fk.clamped);
        assert_relative_eq!(fk.radius, p.leg_geometry.r_max);
        assert_eq!(fk.d_extension, Vector3::zeros());
    }

    #[test]
    fn fk_derivatives_match_finite_differences() {
        let p = DynamicsParams::default();
        let (s, e, h) = (0.37, 1.9, 1e-6);
        let fk = leg_forward_kinematics(s, e, &p);
        let ds =
            (leg_forward_kinematics(s + h, e, &p).position - leg_forward_kinematics(s - h, e, &p).position) / (2.0 * h);
        let de =
            (leg_forward_kinematics(s, e + h, &p).position - leg_forward_kinematics(s, e - h, &p).position) / (2.0 * h);
        assert_relative_eq!(fk.d_swing, ds, epsilon = 1e-8);
        assert_relative_eq!(fk.d_extension, de, epsilon = 1e-8);
    }

    #[test]
    fn contacts_zero_when_airborne() {
        let p = DynamicsParams::default();
        let c = compute_contacts(&airborne(&p), &p);
        assert_eq!(c.total_normal_force(), 0.0);
        assert!(c
            .feet
            .iter()
            .all(|f| !f.in_contact && f.friction_force == Vector2::zeros()));
    }

    #[test]
    fn static_penetration_gives_spring_force() {
        let mut p = DynamicsParams::default();
        p.contact_normal_stiffness = 1.0e4;
        let angles = [1.5; NUM_MOTORS];
        let h = standing_height(&angles, &p);
        let s = RobotState::at_rest(Vector3::new(0.0, 0.0, h - 0.001), angles);
        let c = compute_contacts(&s, &p);
        for foot in &c.feet {
            assert!(foot.in_contact);
            assert_relative_eq!(foot.penetration_depth, 0.001, epsilon = 1e-12);
            assert_relative_eq!(foot.normal_force, 10.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn sliding_foot_respects_cone() {
        let mut p = DynamicsParams::default();
        p.contact_friction_coefficient = 0.5;
        let angles = [1.5; NUM_MOTORS];
        let h = standing_height(&angles, &p);
        let mut s = RobotState::at_rest(Vector3::new(0.0, 0.0, h - 0.001), angles);
        s.base_linear_velocity = Vector3::new(0.7, -0.2, 0.0);
        let c = compute_contacts(&s, &p);
        for foot in &c.feet {
            assert_relative_eq!(foot.normal_force, 10.0, epsilon = 1e-8);
            assert!(foot.friction_force.norm() <= 5.0 + 1e-9);
            assert!(foot.friction_force.x < 0.0);
        }
    }

    #[test]
    fn zero_gravity_rest_is_fixed_point() {
        let mut p = DynamicsParams::default();
        p.gravity = 0.0;
        let s = airborne(&p);
        let next = step_dynamics(&s, &[0.0; NUM_MOTORS], None, &p, 0.001).unwrap();
        let mut expected = s.clone();
        expected.time += 0.001;
        assert_eq!(next, expected);
    }

    #[test]
    fn ballistic_step_is_semi_implicit() {
        let p = DynamicsParams::default();
        let mut s = airborne(&p);
        s.base_linear_velocity = Vector3::new(0.3, 0.0, 1.0);
        let dt = 0.001;
        let next = step_dynamics(&s, &[0.0; NUM_MOTORS], None, &p, dt).unwrap();
        let vz = 1.0 - p.gravity * dt;
        assert_eq!(next.base_linear_velocity.z, vz);
        assert_eq!(next.base_position.z, 2.0 + vz * dt);
    }

    #[test]
    fn nan_torque_is_rejected() {
        let p = DynamicsParams::default();
        let mut tau = [0.0; NUM_MOTORS];
        tau[3] = f64::NAN;
        let err = step_dynamics(&airborne(&p), &tau, None, &p, 0.001).unwrap_err();
        assert!(matches!(err, Error::Diverged { field: "motor_torques" }));
    }

    #[test]
    fn tilt_examples() {
        let mut s = RobotState::at_rest(Vector3::zeros(), [1.5; NUM_MOTORS]);
        assert_eq!(base_tilt(&s), 0.0);
        s.base_orientation = UnitQuaternion::from_euler_angles(0.6, 0.0, 0.0);
        assert_relative_eq!(base_tilt(&s), 0.6, epsilon = 1e-12);
        s.base_orientation = UnitQuaternion::from_euler_angles(0.3, 0.4, 0.0);
        assert_relative_eq!(base_tilt(&s), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn friction_solver_sticks_and_slides() {
        let b = Matrix2::identity() * 0.01;
        // small push: static friction absorbs it
        let f = solve_friction(Vector2::new(0.01, 0.0), b, 10.0, 1e-3);
        assert!(f.norm() < 10.0);
        let v_end = Vector2::new(0.01, 0.0) + b * f;
        assert!(v_end.norm() < 2e-3);
        // large push: force saturates along -v
        let f = solve_friction(Vector2::new(5.0, 0.0), b, 10.0, 1e-3);
        assert_relative_eq!(f.x, -10.0, epsilon = 1e-4);
        assert!(f.norm() <= 10.0);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = DynamicsParams::default();
        p.leg_geometry.r_min = 0.3;
        assert!(p.validate().is_err());
        let mut p = DynamicsParams::default();
        p.inertia_scale = 0.0;
        assert!(p.validate().is_err());
        assert!(DynamicsParams::default().validate().is_ok());
    }
}
