//! Observation latency, IMU corruption, and the spike-based latency
//! measurement protocol.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::actuator::{dc_motor_torque, RotorBench, TorqueCurrentCurve};
use crate::error::{Error, Result};

/// Roll, pitch, roll rate, pitch rate.
pub const IMU_CHANNELS: usize = 4;

/// Timestamps closer than this are treated as the same instant.
const TIME_SNAP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub timestamp: f64,
    pub values: Vec<f64>,
}

/// Bounded FIFO of timestamped observations.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyBuffer {
    records: VecDeque<ObservationRecord>,
    capacity: usize,
}

impl LatencyBuffer {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            records: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Enough room to look `latency` back when records arrive every `period`.
    pub fn for_latency(latency: f64, period: f64) -> Self {
        let steps = if period > 0.0 {
            (latency / period - TIME_SNAP).ceil().max(0.0) as usize
        } else {
            0
        };
        Self::new(steps + 2)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &ObservationRecord> {
        self.records.iter()
    }

    pub fn newest(&self) -> Option<&ObservationRecord> {
        self.records.back()
    }

    pub fn record(&mut self, timestamp: f64, values: Vec<f64>) -> Result<()> {
        if let Some(newest) = self.records.back() {
            if !(timestamp > newest.timestamp) {
                return Err(Error::Ordering {
                    newest: newest.timestamp,
                    got: timestamp,
                });
            }
        }
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(ObservationRecord { timestamp, values });
        Ok(())
    }

    /// Observation as it looked `latency` seconds before `t_now`, linearly
    /// interpolated between the bracketing records and clamped to the stored range.
    pub fn delayed(&self, t_now: f64, latency: f64) -> Result<Vec<f64>> {
        let (Some(oldest), Some(newest)) = (self.records.front(), self.records.back()) else {
            return Err(Error::EmptyBuffer);
        };
        let query = t_now - latency;
        if query <= oldest.timestamp + TIME_SNAP {
            return Ok(oldest.values.clone());
        }
        if query >= newest.timestamp - TIME_SNAP {
            return Ok(newest.values.clone());
        }
        // first record strictly after the query time
        let upper = self.records.partition_point(|r| r.timestamp <= query);
        let (lo, hi) = (&self.records[upper - 1], &self.records[upper]);
        if query - lo.timestamp <= TIME_SNAP {
            return Ok(lo.values.clone());
        }
        if hi.timestamp - query <= TIME_SNAP {
            return Ok(hi.values.clone());
        }
        let w = (query - lo.timestamp) / (hi.timestamp - lo.timestamp);
        Ok(lo
            .values
            .iter()
            .zip(&hi.values)
            .map(|(&a, &b)| (a + w * (b - a)).clamp(a.min(b), a.max(b)))
            .collect())
    }
}

pub fn record_observation(buffer: &mut LatencyBuffer, t: f64, obs: Vec<f64>) -> Result<()> {
    buffer.record(t, obs)
}

pub fn delayed_observation(buffer: &LatencyBuffer, t_now: f64, latency: f64) -> Result<Vec<f64>> {
    buffer.delayed(t_now, latency)
}

/// Adds the episode bias and fresh Gaussian noise to the IMU channels; motor
/// channels are left untouched.
pub fn apply_imu_corruption<R: Rng + ?Sized>(obs: &[f64], bias: f64, noise_std: f64, rng: &mut R) -> Vec<f64> {
    let mut out = obs.to_vec();
    let n = IMU_CHANNELS.min(out.len());
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("noise std is finite and positive");
        for v in &mut out[..n] {
            *v += bias + normal.sample(rng);
        }
    } else {
        for v in &mut out[..n] {
            *v += bias;
        }
    }
    out
}

/// Single motor wired through a sensing pipeline with a known latency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyPlant {
    pub injected_latency: f64,
    /// Length of the PWM spike and the resolution the result is judged at.
    pub control_step: f64,
    /// Physics and sampling period.
    pub substep: f64,
    pub rotor_inertia: f64,
    pub friction_torque: f64,
    pub torque_constant: f64,
    pub armature_resistance: f64,
    pub torque_curve: TorqueCurrentCurve,
    pub spike_voltage: f64,
    /// Smallest reported angle change counted as movement.
    pub detection_threshold: f64,
}

impl LatencyPlant {
    pub fn new(injected_latency: f64, control_step: f64) -> Self {
        let kt = 0.0954;
        Self {
            injected_latency,
            control_step,
            substep: 0.001,
            rotor_inertia: 0.004,
            friction_torque: 0.01,
            torque_constant: kt,
            armature_resistance: 0.186,
            torque_curve: TorqueCurrentCurve::saturating(kt),
            spike_voltage: 16.0,
            detection_threshold: 1e-9,
        }
    }
}

/// Sends a one-control-step PWM spike and returns the delay until the motion
/// shows up in the reported (latency-delayed) motor angle.
pub fn measure_latency(plant: &LatencyPlant) -> Result<f64> {
    if !(plant.substep > 0.0 && plant.control_step >= plant.substep) {
        return Err(Error::Calibration("control step must be at least one substep".into()));
    }
    let mut rotor = RotorBench::new(plant.rotor_inertia, plant.friction_torque);
    let mut buffer = LatencyBuffer::for_latency(plant.injected_latency, plant.substep);
    let spike_steps = (plant.control_step / plant.substep).round() as u64;
    let warmup_steps = 2 * spike_steps;
    let horizon = warmup_steps + spike_steps + (plant.injected_latency / plant.substep).ceil() as u64 + 4 * spike_steps;

    let time = |k: u64| k as f64 * plant.substep;
    buffer.record(0.0, vec![rotor.angle])?;
    let baseline = rotor.angle;
    let spike_time = time(warmup_steps);
    for k in 0..horizon {
        let in_spike = k >= warmup_steps && k < warmup_steps + spike_steps;
        let v_pwm = if in_spike { plant.spike_voltage } else { 0.0 };
        let torque = dc_motor_torque(
            v_pwm,
            rotor.velocity,
            plant.torque_constant,
            plant.armature_resistance,
            &plant.torque_curve,
            1.0,
        );
        rotor.step(torque, plant.substep);
        let t = time(k + 1);
        buffer.record(t, vec![rotor.angle])?;
        let reported = buffer.delayed(t, plant.injected_latency)?[0];
        if (reported - baseline).abs() > plant.detection_threshold {
            if t <= spike_time {
                return Err(Error::Calibration("movement reported before the spike".into()));
            }
            return Ok(t - spike_time);
        }
    }
    Err(Error::Calibration(format!(
        "no movement reported within {:.3} s",
        time(horizon) - spike_time
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn record_and_evict() {
        let mut b = LatencyBuffer::new(2);
        b.record(0.0, vec![0.0]).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.newest().unwrap().timestamp, 0.0);
        b.record(1.0, vec![1.0]).unwrap();
        b.record(2.0, vec![2.0]).unwrap();
        let ts: Vec<f64> = b.records().map(|r| r.timestamp).collect();
        assert_eq!(ts, vec![1.0, 2.0]);
    }

    #[test]
    fn non_monotone_timestamp_rejected() {
        let mut b = LatencyBuffer::new(4);
        b.record(0.5, vec![0.0]).unwrap();
        assert!(matches!(b.record(0.5, vec![1.0]), Err(Error::Ordering { .. })));
        assert!(matches!(b.record(0.4, vec![1.0]), Err(Error::Ordering { .. })));
    }

    #[test]
    fn empty_buffer_query_fails() {
        let b = LatencyBuffer::new(3);
        assert!(matches!(b.delayed(0.0, 0.0), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn grid_and_midpoint_interpolation() {
        let mut b = LatencyBuffer::new(8);
        let o0 = vec![1.0, -2.0, 0.5];
        let o1 = vec![3.0, 2.0, 0.25];
        b.record(0.000, o0.clone()).unwrap();
        b.record(0.006, o1.clone()).unwrap();
        assert_eq!(b.delayed(0.006, 0.0).unwrap(), o1);
        assert_eq!(b.delayed(0.006, 0.006).unwrap(), o0);
        let mid = b.delayed(0.006, 0.003).unwrap();
        for i in 0..3 {
            assert!((mid[i] - (0.5 * o0[i] + 0.5 * o1[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn query_outside_range_clamps() {
        let mut b = LatencyBuffer::new(8);
        b.record(0.010, vec![1.0]).unwrap();
        b.record(0.016, vec![2.0]).unwrap();
        assert_eq!(b.delayed(0.016, 1.0).unwrap(), vec![1.0]);
        assert_eq!(b.delayed(0.030, 0.0).unwrap(), vec![2.0]);
    }

    #[test]
    fn corruption_identity_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        assert_eq!(apply_imu_corruption(&obs, 0.0, 0.0, &mut rng), obs);
        let biased = apply_imu_corruption(&obs, 0.05, 0.0, &mut rng);
        for i in 0..4 {
            assert!((biased[i] - obs[i] - 0.05).abs() < 1e-15);
        }
        assert_eq!(&biased[4..], &obs[4..]);
    }

    #[test]
    fn buffer_capacity_covers_latency() {
        assert_eq!(LatencyBuffer::for_latency(0.018, 0.006).capacity(), 5);
        assert_eq!(LatencyBuffer::for_latency(0.0, 0.006).capacity(), 2);
        assert_eq!(LatencyBuffer::for_latency(0.040, 0.003).capacity(), 16);
    }

    #[test]
    fn calibration_examples() {
        let m = measure_latency(&LatencyPlant::new(0.0, 0.006)).unwrap();
        assert!(m <= 0.006 + 1e-12, "{m}");
        let m = measure_latency(&LatencyPlant::new(0.018, 0.006)).unwrap();
        assert!((0.018 - 1e-12..0.024).contains(&m), "{m}");
        let m = measure_latency(&LatencyPlant::new(0.003, 0.003)).unwrap();
        assert!((0.003 - 1e-12..=0.006).contains(&m), "{m}");
    }

    #[test]
    fn calibration_fails_without_movement() {
        let mut plant = LatencyPlant::new(0.01, 0.006);
        plant.spike_voltage = 0.0;
        assert!(matches!(measure_latency(&plant), Err(Error::Calibration(_))));
    }
}
