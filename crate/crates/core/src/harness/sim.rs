//! Closed-loop simulation of a drive over a soil map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{
    body_accel_directed, rk4_step, slip_ratio, wheel_accel_directed, VehicleParams, WheelDynState, WHEELS,
};
use crate::estimator::SensorRecord;
use crate::soil::{mu_of_s, soil_at, SoilCurveParams};

use super::scenario::{Scenario, ToolProfile};
use super::SimError;

/// Ground truth for one logged step. Kept apart from [`SensorRecord`] so
/// the estimator can never see it.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub mu: [f64; WHEELS],
    pub slip: [f64; WHEELS],
    pub speed: f64,
    pub rho_s: f64,
    pub position: f64,
    pub soil: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulatedLog {
    pub records: Vec<SensorRecord>,
    pub truth: Vec<TruthRecord>,
}

/// Adhesion for signed slip; braking mirrors the driving branch.
fn mu_signed(soil: &SoilCurveParams, s: f64) -> f64 {
    if s >= 0.0 {
        mu_of_s(soil, s)
    } else {
        -mu_of_s(soil, -s)
    }
}

// state layout: omega 0..4, speed, position
const SPEED: usize = WHEELS;
const POSITION: usize = WHEELS + 1;

/// Timestamp of step `k`, rounded to nanoseconds so logs print cleanly.
pub fn timestamp(k: usize, dt: f64) -> f64 {
    (k as f64 * dt * 1e9).round() / 1e9
}

fn tool_pull(sc: &Scenario, t: f64, soil: &SoilCurveParams, rough: f64) -> f64 {
    match &sc.file.tool {
        ToolProfile::Soil { pull, roughness, .. } => (pull[&soil.name] * (1.0 + roughness * rough)).max(0.0),
        ToolProfile::Sweep { slip_start, slip_end } => {
            let frac = (t / sc.file.duration).clamp(0.0, 1.0);
            let target = slip_start + (slip_end - slip_start) * frac;
            ((mu_of_s(soil, target) - soil.rho_s) * sc.vehicle.weight()).max(0.0)
        }
        ToolProfile::Profile { points } => {
            super::scenario::Profile { points: points.clone() }.at(t).max(0.0)
        }
    }
}

/// Runs the scenario. Measurement noise and tool roughness come from one
/// seeded stream, so a scenario always yields the same log.
pub fn simulate(sc: &Scenario) -> Result<SimulatedLog, SimError> {
    let f = &sc.file;
    let veh: &VehicleParams = &sc.vehicle;
    let front_load = veh.static_front_wheel_load();
    let loads = veh.wheel_loads(front_load);
    let h = f.dt / f.substeps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(f.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let omega0 = f.command.at(0.0);
    let mut y = vec![0.0; WHEELS + 2];
    y[..WHEELS].fill(omega0);
    y[SPEED] = omega0 * veh.wheels[0].radius;

    let (phi, rough_on) = match f.tool {
        ToolProfile::Soil { correlation_time, roughness, .. } => ((-f.dt / correlation_time).exp(), roughness > 0.0),
        _ => (0.0, false),
    };
    let mut rough = 0.0;

    let n = sc.steps();
    let mut log = SimulatedLog { records: Vec::with_capacity(n), truth: Vec::with_capacity(n) };
    for k in 0..n {
        let t = timestamp(k, f.dt);
        let soil = soil_at(&sc.map, &sc.catalog, y[POSITION]);
        if rough_on {
            rough = phi * rough + (1.0 - phi * phi).sqrt() * normal();
        }
        let pull = tool_pull(sc, t, soil, rough);
        let command = f.command.at(t);
        let state = y.clone();

        let mut torque_sum = [0.0; WHEELS];
        for _ in 0..f.substeps {
            let mut stage = 0usize;
            let weights = [1.0, 2.0, 2.0, 1.0];
            y = rk4_step(&y, &[], h, &[], |s, _| {
                let soil = soil_at(&sc.map, &sc.catalog, s[POSITION]);
                let mut d = vec![0.0; WHEELS + 2];
                let mut traction = 0.0;
                for i in 0..WHEELS {
                    let w = &veh.wheels[i];
                    let slip = slip_ratio(s[SPEED], s[i], w.radius);
                    let horizontal = mu_signed(soil, slip) * loads[i];
                    traction += horizontal;
                    let torque = f.controller.torque(command, s[i]);
                    torque_sum[i] += weights[stage % 4] / 6.0 * torque;
                    let state = WheelDynState { omega: s[i], drive_torque: torque, horizontal_force: horizontal, vertical_load: loads[i] };
                    d[i] = wheel_accel_directed(&state, w);
                }
                stage += 1;
                d[SPEED] = body_accel_directed(s[SPEED], traction, pull, soil.rho_s, veh.mass, veh.gravity);
                d[POSITION] = s[SPEED];
                d
            })
            .map_err(|_| SimError::NonFinite { last_valid: t })?;
        }
        let torque: [f64; WHEELS] = std::array::from_fn(|i| torque_sum[i] / f.substeps as f64);

        // row k carries the state at t_k and the inputs applied over [t_k, t_k+1)
        let speed = state[SPEED];
        let slip: [f64; WHEELS] = std::array::from_fn(|i| slip_ratio(speed, state[i], veh.wheels[i].radius));
        let mu = std::array::from_fn(|i| mu_signed(soil, slip[i]));
        let noise = &f.noise;
        let omega = std::array::from_fn(|i| state[i] + noise.omega * normal());
        let measured_speed = speed + noise.speed * normal();
        let torque = std::array::from_fn(|i| torque[i] + noise.torque * normal());
        log.records.push(SensorRecord {
            timestamp: t,
            omega,
            speed: measured_speed,
            torque,
            front_load,
            drawbar: pull,
        });
        log.truth.push(TruthRecord {
            mu,
            slip,
            speed,
            rho_s: soil.rho_s,
            position: state[POSITION],
            soil: soil.name.clone(),
        });
    }
    Ok(log)
}
