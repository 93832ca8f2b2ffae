//! Per-episode dynamics randomization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub lower: f64,
    pub upper: f64,
}

impl ParamRange {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn point(value: f64) -> Self {
        Self::new(value, value)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    /// `n` evenly spaced values from `lower` to `upper` inclusive.
    pub fn linspace(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![self.lower],
            _ => (0..n)
                .map(|i| {
                    if i == n - 1 {
                        self.upper
                    } else {
                        self.lower + (self.upper - self.lower) * i as f64 / (n - 1) as f64
                    }
                })
                .collect(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        (self.lower + (self.upper - self.lower) * u).clamp(self.lower, self.upper)
    }
}

/// The physical parameters that are randomized during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomizedParam {
    Mass,
    MotorFriction,
    Inertia,
    MotorStrength,
    ControlStep,
    Latency,
    BatteryVoltage,
    ContactFriction,
    ImuBias,
    ImuNoise,
}

impl RandomizedParam {
    pub const ALL: [RandomizedParam; 10] = [
        RandomizedParam::Mass,
        RandomizedParam::MotorFriction,
        RandomizedParam::Inertia,
        RandomizedParam::MotorStrength,
        RandomizedParam::ControlStep,
        RandomizedParam::Latency,
        RandomizedParam::BatteryVoltage,
        RandomizedParam::ContactFriction,
        RandomizedParam::ImuBias,
        RandomizedParam::ImuNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RandomizedParam::Mass => "mass",
            RandomizedParam::MotorFriction => "motor_friction",
            RandomizedParam::Inertia => "inertia",
            RandomizedParam::MotorStrength => "motor_strength",
            RandomizedParam::ControlStep => "control_step",
            RandomizedParam::Latency => "latency",
            RandomizedParam::BatteryVoltage => "battery_voltage",
            RandomizedParam::ContactFriction => "contact_friction",
            RandomizedParam::ImuBias => "imu_bias",
            RandomizedParam::ImuNoise => "imu_noise",
        }
    }

    /// Unit of the stored value (scales are fractions of nominal, times are seconds).
    pub fn unit(self) -> &'static str {
        match self {
            RandomizedParam::Mass | RandomizedParam::Inertia | RandomizedParam::MotorStrength => "scale",
            RandomizedParam::MotorFriction => "Nm",
            RandomizedParam::ControlStep | RandomizedParam::Latency => "s",
            RandomizedParam::BatteryVoltage => "V",
            RandomizedParam::ContactFriction => "coefficient",
            RandomizedParam::ImuBias | RandomizedParam::ImuNoise => "rad",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::UnknownParameter {
                name: name.to_string(),
                valid: Self::ALL.map(|p| p.name()).join(", "),
            })
    }

    pub fn get(self, p: &DynamicsParams) -> f64 {
        match self {
            RandomizedParam::Mass => p.total_mass_scale,
            RandomizedParam::MotorFriction => p.motor_friction_torque,
            RandomizedParam::Inertia => p.inertia_scale,
            RandomizedParam::MotorStrength => p.motor_strength_scale,
            RandomizedParam::ControlStep => p.control_step,
            RandomizedParam::Latency => p.latency,
            RandomizedParam::BatteryVoltage => p.battery_voltage,
            RandomizedParam::ContactFriction => p.contact_friction_coefficient,
            RandomizedParam::ImuBias => p.imu_bias,
            RandomizedParam::ImuNoise => p.imu_noise_std,
        }
    }

    pub fn set(self, p: &mut DynamicsParams, value: f64) {
        let slot = match self {
            RandomizedParam::Mass => &mut p.total_mass_scale,
            RandomizedParam::MotorFriction => &mut p.motor_friction_torque,
            RandomizedParam::Inertia => &mut p.inertia_scale,
            RandomizedParam::MotorStrength => &mut p.motor_strength_scale,
            RandomizedParam::ControlStep => &mut p.control_step,
            RandomizedParam::Latency => &mut p.latency,
            RandomizedParam::BatteryVoltage => &mut p.battery_voltage,
            RandomizedParam::ContactFriction => &mut p.contact_friction_coefficient,
            RandomizedParam::ImuBias => &mut p.imu_bias,
            RandomizedParam::ImuNoise => &mut p.imu_noise_std,
        };
        *slot = value;
    }
}

/// Sampling range for every randomized parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationRanges {
    pub mass: ParamRange,
    pub motor_friction: ParamRange,
    pub inertia: ParamRange,
    pub motor_strength: ParamRange,
    pub control_step: ParamRange,
    pub latency: ParamRange,
    pub battery_voltage: ParamRange,
    pub contact_friction: ParamRange,
    pub imu_bias: ParamRange,
    pub imu_noise: ParamRange,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            mass: ParamRange::new(0.8, 1.2),
            motor_friction: ParamRange::new(0.0, 0.05),
            inertia: ParamRange::new(0.5, 1.5),
            motor_strength: ParamRange::new(0.8, 1.2),
            control_step: ParamRange::new(0.003, 0.020),
            latency: ParamRange::new(0.0, 0.040),
            battery_voltage: ParamRange::new(14.0, 16.8),
            contact_friction: ParamRange::new(0.5, 1.25),
            imu_bias: ParamRange::new(-0.05, 0.05),
            imu_noise: ParamRange::new(0.0, 0.05),
        }
    }
}

impl RandomizationRanges {
    /// Every range collapsed onto the nominal value.
    pub fn pinned_to(nominal: &DynamicsParams) -> Self {
        let mut r = Self::default();
        for p in RandomizedParam::ALL {
            r.set(p, ParamRange::point(p.get(nominal)));
        }
        r
    }

    pub fn get(&self, p: RandomizedParam) -> ParamRange {
        match p {
            RandomizedParam::Mass => self.mass,
            RandomizedParam::MotorFriction => self.motor_friction,
            RandomizedParam::Inertia => self.inertia,
            RandomizedParam::MotorStrength => self.motor_strength,
            RandomizedParam::ControlStep => self.control_step,
            RandomizedParam::Latency => self.latency,
            RandomizedParam::BatteryVoltage => self.battery_voltage,
            RandomizedParam::ContactFriction => self.contact_friction,
            RandomizedParam::ImuBias => self.imu_bias,
            RandomizedParam::ImuNoise => self.imu_noise,
        }
    }

    pub fn set(&mut self, p: RandomizedParam, range: ParamRange) {
        let slot = match p {
            RandomizedParam::Mass => &mut self.mass,
            RandomizedParam::MotorFriction => &mut self.motor_friction,
            RandomizedParam::Inertia => &mut self.inertia,
            RandomizedParam::MotorStrength => &mut self.motor_strength,
            RandomizedParam::ControlStep => &mut self.control_step,
            RandomizedParam::Latency => &mut self.latency,
            RandomizedParam::BatteryVoltage => &mut self.battery_voltage,
            RandomizedParam::ContactFriction => &mut self.contact_friction,
            RandomizedParam::ImuBias => &mut self.imu_bias,
            RandomizedParam::ImuNoise => &mut self.imu_noise,
        };
        *slot = range;
    }

    pub fn validate(&self) -> Result<()> {
        for p in RandomizedParam::ALL {
            let r = self.get(p);
            if !(r.lower.is_finite() && r.upper.is_finite() && r.lower <= r.upper) {
                return Err(Error::Config(format!(
                    "range for {} must satisfy lower <= upper, got [{}, {}]",
                    p.name(),
                    r.lower,
                    r.upper
                )));
            }
        }
        let positive = [
            RandomizedParam::Mass,
            RandomizedParam::Inertia,
            RandomizedParam::MotorStrength,
            RandomizedParam::ControlStep,
            RandomizedParam::BatteryVoltage,
        ];
        for p in positive {
            if self.get(p).lower <= 0.0 {
                return Err(Error::Config(format!("range for {} must be positive", p.name())));
            }
        }
        for p in [
            RandomizedParam::MotorFriction,
            RandomizedParam::Latency,
            RandomizedParam::ContactFriction,
            RandomizedParam::ImuNoise,
        ] {
            if self.get(p).lower < 0.0 {
                return Err(Error::Config(format!("range for {} must be non-negative", p.name())));
            }
        }
        Ok(())
    }
}

/// Draws every randomized parameter independently and uniformly; all other
/// fields are copied from `nominal`.
pub fn sample_params<R: Rng + ?Sized>(
    ranges: &RandomizationRanges,
    nominal: &DynamicsParams,
    rng: &mut R,
) -> DynamicsParams {
    let mut params = nominal.clone();
    for p in RandomizedParam::ALL {
        let value = ranges.get(p).sample(rng);
        p.set(&mut params, value);
    }
    params
}

/// Identified-system defaults.
pub fn nominal_params() -> DynamicsParams {
    DynamicsParams::default()
}
