//! Adaptive process noise for the UKF.
//!
//! Two pieces cooperate. The adaptation matrix `A_k` rescales the nominal
//! process noise by how much larger the observed innovations are than the
//! filter predicts. A small fuzzy supervisor watches how fast wheel and body
//! speeds are changing and decides how much of that adaptation to let
//! through: intense dynamics get the adapted noise, steady driving gets the
//! nominal one.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::WHEELS;
use crate::ukf::symmetrize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    /// Number of innovations kept (N_w).
    pub window: usize,
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self { window: 30, a_min: 1.0, a_max: 100.0 }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.window == 0 {
            return Err("window must be >= 1".into());
        }
        if !(self.a_min > 0.0 && self.a_min <= self.a_max && self.a_max.is_finite()) {
            return Err(format!("need 0 < a_min <= a_max, got a_min={} a_max={}", self.a_min, self.a_max));
        }
        Ok(())
    }
}

/// Windowed innovation statistics and the resulting scalar-diagonal `A_k`.
#[derive(Debug, Clone)]
pub struct AdaptationState {
    cfg: AdaptationConfig,
    /// (|innovation|^2, trace of predicted innovation covariance)
    buffer: VecDeque<(f64, f64)>,
    scale: f64,
}

impl AdaptationState {
    pub fn new(cfg: AdaptationConfig) -> Self {
        Self { cfg, buffer: VecDeque::with_capacity(cfg.window), scale: 1.0 }
    }

    /// Diagonal entry of `A_k`; 1 while the window is empty.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n) * self.scale
    }

    /// Pushes one innovation with its predicted covariance and recomputes
    /// `A_k = clamp(tr(C_v) / tr(S_mean), a_min, a_max) I`, where `C_v` is the
    /// windowed second moment of the innovations (zero mean under a
    /// consistent filter).
    pub fn update(&mut self, innovation: &DVector<f64>, innovation_covariance: &DMatrix<f64>) {
        if self.buffer.len() == self.cfg.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back((innovation.norm_squared(), innovation_covariance.trace()));
        let (energy, predicted) = self.buffer.iter().fold((0.0, 0.0), |(e, p), (ei, pi)| (e + ei, p + pi));
        self.scale = if predicted > 0.0 {
            (energy / predicted).clamp(self.cfg.a_min, self.cfg.a_max)
        } else {
            self.cfg.a_max
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisorConfig {
    /// Number of measurements in the moving window (N_f).
    pub window: usize,
    /// Normalized intensity below which dynamics count as fully "low".
    pub low: f64,
    /// Normalized intensity above which dynamics count as fully "high".
    pub high: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Wheel-speed rate (rad/s per step) that normalizes to 1.
    pub omega_scale: f64,
    /// Body-speed rate (m/s per step) that normalizes to 1.
    pub speed_scale: f64,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            window: 20,
            low: 0.3,
            high: 1.0,
            lambda_min: 0.0,
            lambda_max: 1.0,
            omega_scale: 0.003,
            speed_scale: 0.005,
        }
    }
}

impl SupervisorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.window < 2 {
            return Err(format!("window must be >= 2, got {}", self.window));
        }
        if !(self.low >= 0.0 && self.low < self.high) {
            return Err(format!("need 0 <= low < high, got low={} high={}", self.low, self.high));
        }
        if !(0.0 <= self.lambda_min && self.lambda_min <= self.lambda_max && self.lambda_max <= 1.0) {
            return Err(format!(
                "need 0 <= lambda_min <= lambda_max <= 1, got {} and {}",
                self.lambda_min, self.lambda_max
            ));
        }
        if !(self.omega_scale > 0.0 && self.speed_scale > 0.0) {
            return Err("omega_scale and speed_scale must be > 0".into());
        }
        Ok(())
    }

    fn mid(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

/// Memberships (low, medium, high) of a normalized intensity. Triangles and
/// shoulders meet at the midpoint between the thresholds.
fn memberships(x: f64, cfg: &SupervisorConfig) -> [f64; 3] {
    let (lo, hi, mid) = (cfg.low, cfg.high, cfg.mid());
    if x <= lo {
        [1.0, 0.0, 0.0]
    } else if x >= hi {
        [0.0, 0.0, 1.0]
    } else if x <= mid {
        let t = (x - lo) / (mid - lo);
        [1.0 - t, t, 0.0]
    } else {
        let t = (x - mid) / (hi - mid);
        [0.0, 1.0 - t, t]
    }
}

/// Output singletons for the labels low, medium, high.
const OUTPUT_LEVELS: [f64; 3] = [0.0, 0.5, 1.0];

/// Two-input Mamdani inference: the rule for labels (i, j) concludes
/// label max(i, j); min for AND, max for aggregation, centroid over the
/// output singletons.
fn infer(omega_intensity: f64, speed_intensity: f64, cfg: &SupervisorConfig) -> f64 {
    let a = memberships(omega_intensity, cfg);
    let b = memberships(speed_intensity, cfg);
    let mut out = [0.0f64; 3];
    for (i, ma) in a.iter().enumerate() {
        for (j, mb) in b.iter().enumerate() {
            let k = i.max(j);
            out[k] = out[k].max(ma.min(*mb));
        }
    }
    let total: f64 = out.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    out.iter().zip(OUTPUT_LEVELS).map(|(w, c)| w * c).sum::<f64>() / total
}

/// Rate of change over a window from the difference of its half means,
/// per step.
fn window_rate(values: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let len = values.len();
    let half = len / 2;
    let first: f64 = values.clone().take(half).sum::<f64>() / half as f64;
    let last: f64 = values.skip(len - half).sum::<f64>() / half as f64;
    (last - first).abs() / (len - half) as f64
}

/// Normalized intensity of recent vehicle dynamics mapped through the fuzzy
/// rule base to [0, 1]. Windows shorter than two samples count as steady.
pub fn dynamics_intensity(recent_omega: &[[f64; WHEELS]], recent_speed: &[f64], cfg: &SupervisorConfig) -> f64 {
    if recent_omega.len() < 2 || recent_speed.len() < 2 {
        return 0.0;
    }
    let omega_rate = (0..WHEELS)
        .map(|w| window_rate(recent_omega.iter().map(move |o| o[w])))
        .sum::<f64>()
        / WHEELS as f64;
    let speed_rate = window_rate(recent_speed.iter().copied());
    infer(omega_rate / cfg.omega_scale, speed_rate / cfg.speed_scale, cfg).clamp(0.0, 1.0)
}

/// Moving window of measurements feeding the supervisor.
#[derive(Debug, Clone)]
pub struct Supervisor {
    cfg: SupervisorConfig,
    omega: VecDeque<[f64; WHEELS]>,
    speed: VecDeque<f64>,
    factor: f64,
}

impl Supervisor {
    pub fn new(cfg: SupervisorConfig) -> Self {
        Self {
            cfg,
            omega: VecDeque::with_capacity(cfg.window),
            speed: VecDeque::with_capacity(cfg.window),
            factor: cfg.lambda_min,
        }
    }

    /// Current blend factor lambda.
    pub fn factor(&self) -> f64 {
        self.factor
    }

    pub fn push(&mut self, omega: [f64; WHEELS], speed: f64) {
        if self.omega.len() == self.cfg.window {
            self.omega.pop_front();
            self.speed.pop_front();
        }
        self.omega.push_back(omega);
        self.speed.push_back(speed);
        let omega: Vec<[f64; WHEELS]> = self.omega.iter().copied().collect();
        let speed: Vec<f64> = self.speed.iter().copied().collect();
        let intensity = dynamics_intensity(&omega, &speed, &self.cfg);
        self.factor = self.cfg.lambda_min + (self.cfg.lambda_max - self.cfg.lambda_min) * intensity;
    }
}

/// `(lambda A + (1 - lambda) I) Q`, symmetrized.
pub fn effective_process_noise(q: &DMatrix<f64>, adaptation: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = q.nrows();
    let blend = adaptation * lambda + DMatrix::<f64>::identity(n, n) * (1.0 - lambda);
    symmetrize(&(blend * q))
}
