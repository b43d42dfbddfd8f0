use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scanpath::{gait, sample_count};
use super::{Activity, Label, Mode, ScenarioSpec, SimConfig};
use crate::error::{shape_err, Result};
use crate::rng::Rng;

/// Channels: gravity-compensated acceleration (x right, y up, z forward,
/// m/s²) followed by angular rate about the same axes (rad/s).
pub const IMU_DIM: usize = 6;

const STREAM_IMU: u64 = 2;
const STREAM_MOTION: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuWindow {
    hz: f64,
    data: Vec<f64>,
}

impl ImuWindow {
    pub fn new(hz: f64, data: Vec<f64>) -> Result<Self> {
        if !(hz > 0.0) {
            return shape_err(format!("IMU rate {hz} must be positive"));
        }
        if data.is_empty() || !data.len().is_multiple_of(IMU_DIM) {
            return shape_err(format!(
                "IMU data length {} is not a positive multiple of 6",
                data.len()
            ));
        }
        Ok(ImuWindow { hz, data })
    }

    pub fn hz(&self) -> f64 {
        self.hz
    }

    pub fn len(&self) -> usize {
        self.data.len() / IMU_DIM
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.hz
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * IMU_DIM..(i + 1) * IMU_DIM]
    }

    /// Samples `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return shape_err(format!("IMU slice {start}..{end} outside 0..{}", self.len()));
        }
        ImuWindow::new(self.hz, self.data[start * IMU_DIM..end * IMU_DIM].to_vec())
    }

    /// Channel `c` as a series.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(IMU_DIM).copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Stationary,
    Walking,
    HeadTurns,
}

impl MotionKind {
    pub fn of(spec: &ScenarioSpec) -> MotionKind {
        if spec.label == Label::Reading {
            return if spec.mode == Mode::WalkRead {
                MotionKind::Walking
            } else {
                MotionKind::Stationary
            };
        }
        let u: f64 = spec.rng(STREAM_MOTION).random();
        match spec.activity {
            Some(Activity::HardNegative) if u < 0.6 => MotionKind::Stationary,
            Some(Activity::HardNegative) => MotionKind::HeadTurns,
            _ if u < 0.25 => MotionKind::Stationary,
            _ if u < 0.6 => MotionKind::Walking,
            _ => MotionKind::HeadTurns,
        }
    }
}

/// Motion with fixed random parameters, sampled over arbitrary spans.
pub(super) struct MotionSource {
    kind: MotionKind,
    step_hz: f64,
    phase: f64,
    amp: f64,
    sway_hz: f64,
    /// Head-turn pulses as (centre time, half width, peak rate).
    pulses: Vec<(f64, f64, f64)>,
    accel: Normal<f64>,
    gyro: Normal<f64>,
}

impl MotionSource {
    pub fn new(kind: MotionKind, cfg: &SimConfig, gait: (f64, f64), rng: &mut Rng, t0: f64, t1: f64) -> Self {
        let mut pulses = Vec::new();
        if kind == MotionKind::HeadTurns {
            let mut t = t0 + rng.random_range(0.0..0.6);
            while t < t1 + 0.5 {
                let half = rng.random_range(0.2..0.4) / 2.0;
                let peak = rng.random_range(1.0..2.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                pulses.push((t, half, peak));
                t += rng.random_range(0.4..1.2);
            }
        }
        MotionSource {
            kind,
            step_hz: gait.0,
            phase: gait.1,
            amp: rng.random_range(1.2..2.0),
            sway_hz: rng.random_range(0.2..0.5),
            pulses,
            accel: Normal::new(0.0, cfg.accel_noise.max(0.0)).expect("accel noise"),
            gyro: Normal::new(0.0, cfg.gyro_noise.max(0.0)).expect("gyro noise"),
        }
    }

    pub fn sample(&self, t: f64, rng: &mut Rng) -> [f64; IMU_DIM] {
        use std::f64::consts::TAU;
        let mut s = [0.0; IMU_DIM];
        let sway = (TAU * self.sway_hz * t).sin();
        s[3] = 0.03 * sway;
        s[4] = 0.02 * (0.7 * TAU * self.sway_hz * t).cos();
        match self.kind {
            MotionKind::Stationary => {}
            MotionKind::Walking => {
                let w = TAU * self.step_hz * t + self.phase;
                s[0] += 0.3 * (0.5 * w).sin();
                s[1] += self.amp * w.sin() + 0.3 * self.amp * (2.0 * w).sin();
                s[2] += 0.4 * (w + 1.0).sin();
                s[3] += 0.1 * w.sin();
                s[4] += 0.1 * (0.5 * w).sin();
                s[5] += 0.15 * (0.5 * w).sin();
            }
            MotionKind::HeadTurns => {
                for &(c, half, peak) in &self.pulses {
                    let u = (t - c) / half;
                    if u.abs() < 1.0 {
                        let k = (std::f64::consts::FRAC_PI_2 * u).cos();
                        s[4] += peak * k * k;
                    }
                }
            }
        }
        for (i, v) in s.iter_mut().enumerate() {
            *v += if i < 3 {
                self.accel.sample(rng)
            } else {
                self.gyro.sample(rng)
            };
        }
        s
    }
}

/// Head motion for a clip: stationary noise, a step-frequency oscillation
/// when walking, or yaw-rate pulses when looking around.
pub fn gen_imu(spec: &ScenarioSpec, cfg: &SimConfig, hz: f64, duration: f64) -> Result<ImuWindow> {
    spec.validate()?;
    let n = sample_count(hz, duration)?;
    let kind = MotionKind::of(spec);
    let mut rng = spec.rng(STREAM_IMU);
    let src = MotionSource::new(kind, cfg, gait(spec, cfg), &mut rng, 0.0, duration);
    let mut data = Vec::with_capacity(n * IMU_DIM);
    for i in 0..n {
        data.extend_from_slice(&src.sample(i as f64 / hz, &mut rng));
    }
    ImuWindow::new(hz, data)
}
