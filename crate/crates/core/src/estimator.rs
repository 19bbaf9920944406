//! The traction estimator: four wheel speeds, body speed, four adhesion
//! coefficients and the soil rolling resistance, tracked by the UKF core
//! with optional adaptive process noise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aukf::{effective_process_noise, AdaptationConfig, AdaptationState, Supervisor, SupervisorConfig};
use crate::dynamics::{
    body_accel_directed, rk4_step, slip_ratio, wheel_accel_directed, DynamicsError, VehicleParams, WheelDynState,
    WHEELS,
};
use crate::ukf::{self, GaussianEstimate, UkfError, UnscentedParams};

pub const STATE_DIM: usize = 10;
pub const MEASUREMENT_DIM: usize = 5;
pub const INPUT_DIM: usize = 6;

const SPEED: usize = 4;
const MU: usize = 5;
const RHO: usize = 9;
/// Indices of the parameters (adhesion coefficients and soil resistance)
/// that the dynamics hold constant.
pub const PARAMETERS: [usize; 5] = [5, 6, 7, 8, 9];

/// `[omega_1..4, v, mu_1..4, rho_s]`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TractionState(pub [f64; STATE_DIM]);

impl TractionState {
    pub fn new(omega: [f64; WHEELS], speed: f64, mu: [f64; WHEELS], rho_s: f64) -> Self {
        let mut x = [0.0; STATE_DIM];
        x[..WHEELS].copy_from_slice(&omega);
        x[SPEED] = speed;
        x[MU..MU + WHEELS].copy_from_slice(&mu);
        x[RHO] = rho_s;
        Self(x)
    }

    pub fn omega(&self) -> [f64; WHEELS] {
        std::array::from_fn(|i| self.0[i])
    }

    pub fn speed(&self) -> f64 {
        self.0[SPEED]
    }

    pub fn mu(&self) -> [f64; WHEELS] {
        std::array::from_fn(|i| self.0[MU + i])
    }

    pub fn rho_s(&self) -> f64 {
        self.0[RHO]
    }

    fn to_vector(self) -> DVector<f64> {
        DVector::from_row_slice(&self.0)
    }

    fn from_slice(x: &[f64]) -> Self {
        Self(x.try_into().expect("state has ten entries"))
    }
}

/// `[omega_1..4, v]`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementVector(pub [f64; MEASUREMENT_DIM]);

/// Drive torques, the vertical load on each front wheel and the drawbar pull.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputVector {
    pub torque: [f64; WHEELS],
    pub front_load: f64,
    pub drawbar: f64,
}

impl InputVector {
    fn to_vector(self) -> DVector<f64> {
        let mut u = DVector::zeros(INPUT_DIM);
        for i in 0..WHEELS {
            u[i] = self.torque[i];
        }
        u[4] = self.front_load;
        u[5] = self.drawbar;
        u
    }

    fn from_slice(u: &[f64]) -> Self {
        Self { torque: [u[0], u[1], u[2], u[3]], front_load: u[4], drawbar: u[5] }
    }
}

/// One timestamped row of measurements and inputs. Ground truth never
/// travels in this type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorRecord {
    pub timestamp: f64,
    pub omega: [f64; WHEELS],
    pub speed: f64,
    pub torque: [f64; WHEELS],
    pub front_load: f64,
    pub drawbar: f64,
}

impl SensorRecord {
    pub fn measurement(&self) -> MeasurementVector {
        let mut y = [0.0; MEASUREMENT_DIM];
        y[..WHEELS].copy_from_slice(&self.omega);
        y[SPEED] = self.speed;
        MeasurementVector(y)
    }

    pub fn inputs(&self) -> InputVector {
        InputVector { torque: self.torque, front_load: self.front_load, drawbar: self.drawbar }
    }

    fn is_finite(&self) -> bool {
        self.timestamp.is_finite()
            && self.speed.is_finite()
            && self.front_load.is_finite()
            && self.drawbar.is_finite()
            && self.omega.iter().chain(&self.torque).all(|v| v.is_finite())
    }
}

/// Logged filter output for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRecord {
    pub timestamp: f64,
    pub state: TractionState,
    /// Diagonal of the posterior covariance.
    pub variance: [f64; STATE_DIM],
    pub slip: [f64; WHEELS],
    /// Supervisor blend factor applied in this step.
    pub lambda: f64,
    /// Diagonal entry of the adaptation matrix applied in this step.
    pub adaptation: f64,
}

/// Integrates wheel and body speeds over `dt` with the adhesion
/// coefficients and rolling resistance held fixed.
pub fn transition(
    x: &TractionState,
    u: &InputVector,
    dt: f64,
    vehicle: &VehicleParams,
) -> Result<TractionState, DynamicsError> {
    let loads = vehicle.wheel_loads(u.front_load);
    let inputs = u.to_vector();
    let next = rk4_step(&x.0, inputs.as_slice(), dt, &PARAMETERS, |s, u| {
        let mut d = vec![0.0; STATE_DIM];
        let mut traction = 0.0;
        for i in 0..WHEELS {
            let horizontal = s[MU + i] * loads[i];
            traction += horizontal;
            let wheel = WheelDynState {
                omega: s[i],
                drive_torque: u[i],
                horizontal_force: horizontal,
                vertical_load: loads[i],
            };
            d[i] = wheel_accel_directed(&wheel, &vehicle.wheels[i]);
        }
        d[SPEED] = body_accel_directed(s[SPEED], traction, u[5], s[RHO], vehicle.mass, vehicle.gravity);
        d
    })?;
    Ok(TractionState::from_slice(&next))
}

pub fn measure(x: &TractionState) -> MeasurementVector {
    let mut y = [0.0; MEASUREMENT_DIM];
    y.copy_from_slice(&x.0[..MEASUREMENT_DIM]);
    MeasurementVector(y)
}

/// Per-step process noise variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessNoise {
    pub omega: f64,
    pub speed: f64,
    pub mu: f64,
    pub rho_s: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self { omega: 1e-6, speed: 1e-6, mu: 3e-6, rho_s: 1e-6 }
    }
}

/// Measurement noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementNoise {
    pub omega: f64,
    pub speed: f64,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        Self { omega: 0.05, speed: 0.03 }
    }
}

/// Initial belief about the unmeasured parameters. Speeds start from the
/// first measurement with the measurement variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialBelief {
    pub mu: f64,
    pub rho_s: f64,
    pub mu_variance: f64,
    pub rho_s_variance: f64,
}

impl Default for InitialBelief {
    fn default() -> Self {
        Self { mu: 0.3, rho_s: 0.05, mu_variance: 1.0, rho_s_variance: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Use the adaptive process noise with supervisor; otherwise a plain UKF.
    pub adaptive: bool,
    pub unscented: UnscentedParams,
    pub process_noise: ProcessNoise,
    pub measurement_noise: MeasurementNoise,
    pub initial: InitialBelief,
    pub adaptation: AdaptationConfig,
    pub supervisor: SupervisorConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            adaptive: true,
            unscented: UnscentedParams::default(),
            process_noise: ProcessNoise::default(),
            measurement_noise: MeasurementNoise::default(),
            initial: InitialBelief::default(),
            adaptation: AdaptationConfig::default(),
            supervisor: SupervisorConfig::default(),
        }
    }
}

impl FilterConfig {
    pub fn plain() -> Self {
        Self { adaptive: false, ..Self::default() }
    }

    /// Validates and returns the first problem as `(field path, message)`.
    pub fn validate(&self) -> Result<(), (String, String)> {
        fn at(path: &'static str) -> impl Fn(String) -> (String, String) {
            move |msg| (path.to_string(), msg)
        }
        self.unscented.validate().map_err(at("unscented"))?;
        self.adaptation.validate().map_err(at("adaptation"))?;
        self.supervisor.validate().map_err(at("supervisor"))?;
        let q = &self.process_noise;
        for (name, v) in [("omega", q.omega), ("speed", q.speed), ("mu", q.mu), ("rho_s", q.rho_s)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err((format!("process_noise.{name}"), format!("must be a finite value >= 0, got {v}")));
            }
        }
        let r = &self.measurement_noise;
        for (name, v) in [("omega", r.omega), ("speed", r.speed)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err((format!("measurement_noise.{name}"), format!("must be > 0, got {v}")));
            }
        }
        let i = &self.initial;
        for (name, v) in [("mu_variance", i.mu_variance), ("rho_s_variance", i.rho_s_variance)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err((format!("initial.{name}"), format!("must be > 0, got {v}")));
            }
        }
        if !(i.rho_s >= 0.0) || !i.mu.is_finite() {
            return Err(("initial".into(), "need finite mu and rho_s >= 0".into()));
        }
        Ok(())
    }

    pub fn process_noise_matrix(&self) -> DMatrix<f64> {
        let q = &self.process_noise;
        let mut d = [q.mu; STATE_DIM];
        d[..WHEELS].fill(q.omega);
        d[SPEED] = q.speed;
        d[RHO] = q.rho_s;
        DMatrix::from_diagonal(&DVector::from_row_slice(&d))
    }

    pub fn measurement_noise_matrix(&self) -> DMatrix<f64> {
        let r = &self.measurement_noise;
        let mut d = [r.omega * r.omega; MEASUREMENT_DIM];
        d[SPEED] = r.speed * r.speed;
        DMatrix::from_diagonal(&DVector::from_row_slice(&d))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("timestamp {current} does not follow the previous {previous}")]
    NonMonotonic { previous: f64, current: f64 },
    #[error("record at t={0} contains non-finite values")]
    NonFiniteRecord(f64),
    #[error(transparent)]
    Filter(#[from] UkfError),
}

/// AUKF-FS (or plain UKF) over the traction model. Steps must be fed in
/// timestamp order; a failed step leaves the previous estimate in place.
#[derive(Debug, Clone)]
pub struct TractionFilter {
    vehicle: VehicleParams,
    cfg: FilterConfig,
    process_noise: DMatrix<f64>,
    measurement_noise: DMatrix<f64>,
    estimate: Option<GaussianEstimate>,
    previous: Option<SensorRecord>,
    adaptation: AdaptationState,
    supervisor: Supervisor,
}

impl TractionFilter {
    pub fn new(vehicle: VehicleParams, cfg: FilterConfig) -> Self {
        Self {
            vehicle,
            process_noise: cfg.process_noise_matrix(),
            measurement_noise: cfg.measurement_noise_matrix(),
            estimate: None,
            previous: None,
            adaptation: AdaptationState::new(cfg.adaptation),
            supervisor: Supervisor::new(cfg.supervisor),
            cfg,
        }
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    /// Replaces the measurement noise covariance, e.g. to model an
    /// uninformative sensor.
    pub fn set_measurement_noise(&mut self, r: DMatrix<f64>) {
        self.measurement_noise = r;
    }

    pub fn estimate(&self) -> Option<&GaussianEstimate> {
        self.estimate.as_ref()
    }

    fn initial_estimate(&self, record: &SensorRecord) -> GaussianEstimate {
        let init = &self.cfg.initial;
        let x = TractionState::new(record.omega, record.speed, [init.mu; WHEELS], init.rho_s);
        let r = &self.cfg.measurement_noise;
        let mut var = [init.mu_variance; STATE_DIM];
        var[..WHEELS].fill(r.omega * r.omega);
        var[SPEED] = r.speed * r.speed;
        var[RHO] = init.rho_s_variance;
        GaussianEstimate::new(x.to_vector(), DMatrix::from_diagonal(&DVector::from_row_slice(&var)))
    }

    pub fn step(&mut self, record: &SensorRecord) -> Result<EstimateRecord, StepError> {
        if !record.is_finite() {
            return Err(StepError::NonFiniteRecord(record.timestamp));
        }
        let (prior, lambda, adaptation) = match (&self.estimate, &self.previous) {
            (Some(est), Some(prev)) => {
                if !(record.timestamp > prev.timestamp) {
                    return Err(StepError::NonMonotonic { previous: prev.timestamp, current: record.timestamp });
                }
                let dt = record.timestamp - prev.timestamp;
                let (lambda, scale) = if self.cfg.adaptive {
                    (self.supervisor.factor(), self.adaptation.scale())
                } else {
                    (0.0, 1.0)
                };
                let q = if self.cfg.adaptive {
                    effective_process_noise(&self.process_noise, &self.adaptation.matrix(STATE_DIM), lambda)
                } else {
                    self.process_noise.clone()
                };
                let vehicle = self.vehicle;
                let points = ukf::generate_sigma_points(est, &self.cfg.unscented)?;
                let predicted = ukf::predict(
                    &points,
                    |x, u| {
                        let state = TractionState::from_slice(x.as_slice());
                        match transition(&state, &InputVector::from_slice(u.as_slice()), dt, &vehicle) {
                            Ok(next) => next.to_vector(),
                            Err(_) => DVector::from_element(STATE_DIM, f64::NAN),
                        }
                    },
                    &prev.inputs().to_vector(),
                    &q,
                )?;
                (predicted, lambda, scale)
            }
            _ => {
                let lambda = if self.cfg.adaptive { self.supervisor.factor() } else { 0.0 };
                (self.initial_estimate(record), lambda, 1.0)
            }
        };

        let y = DVector::from_row_slice(&record.measurement().0);
        let points = ukf::generate_sigma_points(&prior, &self.cfg.unscented)?;
        let out = ukf::update(
            &prior,
            &points,
            |x| DVector::from_row_slice(&measure(&TractionState::from_slice(x.as_slice())).0),
            &y,
            &self.measurement_noise,
        )?;
        let mut posterior = out.posterior;
        if posterior.mean[RHO] < 0.0 {
            posterior.mean[RHO] = 0.0;
        }

        self.adaptation.update(&out.innovation, &out.innovation_covariance);
        self.supervisor.push(record.omega, record.speed);

        let state = TractionState::from_slice(posterior.mean.as_slice());
        let variance: [f64; STATE_DIM] = std::array::from_fn(|i| posterior.covariance[(i, i)]);
        let slip = std::array::from_fn(|i| slip_ratio(state.speed(), state.0[i], self.vehicle.wheels[i].radius));
        self.estimate = Some(posterior);
        self.previous = Some(*record);
        Ok(EstimateRecord { timestamp: record.timestamp, state, variance, slip, lambda, adaptation })
    }
}
