//! Longitudinal wheel and body dynamics.
//!
//! Kinematic formulas (slip, adhesion, net traction, efficiency), the wheel
//! torque balance, the whole-vehicle force balance and a classical RK4 step.
//! Everything is in SI units.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of driven wheels on the vehicle.
pub const WHEELS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("vertical load must be positive, got {0} N")]
    NonPositiveLoad(f64),
    #[error("efficiency undefined: net traction plus resistance is zero")]
    ZeroTractionSum,
    #[error("non-finite derivative while integrating state {state:?}")]
    NonFinite { state: Vec<f64> },
}

/// Per-wheel physical constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WheelParams {
    /// Wheel mass (kg).
    pub mass: f64,
    /// Moment of inertia about the axle (kg m^2).
    pub inertia: f64,
    /// Dynamic rolling radius (m).
    pub radius: f64,
    /// Tire-deformation rolling resistance coefficient.
    pub tire_resistance: f64,
    /// Bearing friction coefficient (N s); the friction force is proportional to wheel speed.
    pub bearing_friction: f64,
}

impl WheelParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.mass > 0.0) {
            return Err(format!("mass must be > 0, got {}", self.mass));
        }
        if !(self.inertia > 0.0) {
            return Err(format!("inertia must be > 0, got {}", self.inertia));
        }
        if !(self.radius > 0.0) {
            return Err(format!("radius must be > 0, got {}", self.radius));
        }
        if !(self.tire_resistance >= 0.0) {
            return Err(format!("tire_resistance must be >= 0, got {}", self.tire_resistance));
        }
        if !(self.bearing_friction >= 0.0) {
            return Err(format!("bearing_friction must be >= 0, got {}", self.bearing_friction));
        }
        Ok(())
    }
}

/// Whole-vehicle constants. Wheels are ordered front-left, front-right,
/// rear-left, rear-right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Total mass including wheels (kg).
    pub mass: f64,
    pub wheels: [WheelParams; WHEELS],
    /// Static share of the weight carried by the front axle.
    pub front_load_fraction: f64,
    pub gravity: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), String> {
        for (i, w) in self.wheels.iter().enumerate() {
            w.validate().map_err(|e| format!("wheels[{i}].{e}"))?;
        }
        let wheel_mass: f64 = self.wheels.iter().map(|w| w.mass).sum();
        if !(self.mass >= wheel_mass) {
            return Err(format!(
                "mass must be at least the summed wheel mass {wheel_mass}, got {}",
                self.mass
            ));
        }
        if !(self.front_load_fraction > 0.0 && self.front_load_fraction < 1.0) {
            return Err(format!(
                "front_load_fraction must lie in (0, 1), got {}",
                self.front_load_fraction
            ));
        }
        if !(self.gravity > 0.0) {
            return Err(format!("gravity must be > 0, got {}", self.gravity));
        }
        Ok(())
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }

    /// Static vertical load on one front wheel.
    pub fn static_front_wheel_load(&self) -> f64 {
        self.front_load_fraction * self.weight() / 2.0
    }

    /// Per-wheel vertical loads given the load on each front wheel; the rear
    /// axle carries the remaining weight, split evenly.
    pub fn wheel_loads(&self, front_wheel_load: f64) -> [f64; WHEELS] {
        let rear = (self.weight() - 2.0 * front_wheel_load) / 2.0;
        [front_wheel_load, front_wheel_load, rear, rear]
    }
}

/// Instantaneous quantities at one wheel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelDynState {
    /// Angular speed (rad/s).
    pub omega: f64,
    /// Drive torque (N m).
    pub drive_torque: f64,
    /// Horizontal ground force (N).
    pub horizontal_force: f64,
    /// Vertical load (N).
    pub vertical_load: f64,
}

/// Instantaneous body quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyDynState {
    pub speed: f64,
    pub drawbar_pull: f64,
    pub soil_resistance: f64,
}

/// Slip ratio in [-1, 1]: 1 for a wheel spinning on the spot, -1 for a
/// locked wheel. A standing vehicle (v = 0, omega = 0) has zero slip.
pub fn slip_ratio(v: f64, omega: f64, radius: f64) -> f64 {
    let ground = v.abs();
    let circumferential = radius * omega.abs();
    if ground == 0.0 && circumferential == 0.0 {
        return 0.0;
    }
    let s = if ground <= circumferential {
        1.0 - ground / circumferential
    } else {
        -1.0 + circumferential / ground
    };
    s.clamp(-1.0, 1.0)
}

pub fn adhesion_coefficient(horizontal_force: f64, vertical_load: f64) -> Result<f64, DynamicsError> {
    if !(vertical_load > 0.0) {
        return Err(DynamicsError::NonPositiveLoad(vertical_load));
    }
    Ok(horizontal_force / vertical_load)
}

/// Net traction ratio: the share of the load converted into forward pull.
pub fn net_traction(mu: f64, soil_resistance: f64) -> f64 {
    mu - soil_resistance
}

/// Traction efficiency `kappa / (kappa + rho) * (1 - s)`. The caller decides
/// which rolling resistance `rho` stands for.
pub fn efficiency(kappa: f64, rho: f64, slip: f64) -> Result<f64, DynamicsError> {
    let sum = kappa + rho;
    if sum == 0.0 {
        return Err(DynamicsError::ZeroTractionSum);
    }
    Ok(kappa / sum * (1.0 - slip))
}

/// Wheel torque balance. The tire resistance force is `rho_t * F_z`.
pub fn wheel_angular_accel(state: &WheelDynState, params: &WheelParams) -> f64 {
    let tire_force = params.tire_resistance * state.vertical_load;
    (state.drive_torque
        - params.radius * state.horizontal_force
        - params.radius * tire_force
        - params.radius * params.bearing_friction * state.omega)
        / params.inertia
}

/// Whole-vehicle longitudinal force balance.
pub fn body_accel(horizontal_force_sum: f64, drawbar_pull: f64, soil_resistance: f64, mass: f64, gravity: f64) -> f64 {
    (horizontal_force_sum - drawbar_pull - soil_resistance * mass * gravity) / mass
}

/// Resistive force that opposes motion. At standstill it acts as static
/// friction: it cancels the driving force up to `magnitude`.
pub(crate) fn opposing(speed: f64, driving: f64, magnitude: f64) -> f64 {
    if speed > 0.0 {
        magnitude
    } else if speed < 0.0 {
        -magnitude
    } else if driving.abs() <= magnitude {
        driving
    } else {
        magnitude.copysign(driving)
    }
}

/// Wheel acceleration with resistances that always oppose rotation.
/// Equals [`wheel_angular_accel`] for forward rolling.
pub(crate) fn wheel_accel_directed(state: &WheelDynState, params: &WheelParams) -> f64 {
    if state.omega > 0.0 {
        return wheel_angular_accel(state, params);
    }
    let driving = state.drive_torque - params.radius * state.horizontal_force;
    let tire = opposing(state.omega, driving, params.radius * params.tire_resistance * state.vertical_load);
    (driving - tire - params.radius * params.bearing_friction * state.omega) / params.inertia
}

/// Body acceleration with soil resistance and drawbar pull acting against
/// motion. Equals [`body_accel`] for forward motion.
pub(crate) fn body_accel_directed(
    speed: f64,
    horizontal_force_sum: f64,
    drawbar_pull: f64,
    soil_resistance: f64,
    mass: f64,
    gravity: f64,
) -> f64 {
    if speed > 0.0 {
        return body_accel(horizontal_force_sum, drawbar_pull, soil_resistance, mass, gravity);
    }
    let resistance = opposing(speed, horizontal_force_sum, drawbar_pull + soil_resistance * mass * gravity);
    (horizontal_force_sum - resistance) / mass
}

/// One classical fourth-order Runge-Kutta step of `x' = derivative(x, u)`
/// with the input `u` held constant over the step.
///
/// Entries listed in `frozen` are parameters: they keep their value in every
/// sub-stage and in the result, whatever the derivative reports for them.
pub fn rk4_step<F>(
    state: &[f64],
    inputs: &[f64],
    dt: f64,
    frozen: &[usize],
    mut derivative: F,
) -> Result<Vec<f64>, DynamicsError>
where
    F: FnMut(&[f64], &[f64]) -> Vec<f64>,
{
    let n = state.len();
    let mut eval = |x: &[f64]| -> Result<Vec<f64>, DynamicsError> {
        let mut d = derivative(x, inputs);
        debug_assert_eq!(d.len(), n);
        for &i in frozen {
            d[i] = 0.0;
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite { state: x.to_vec() });
        }
        Ok(d)
    };
    let offset = |k: &[f64], h: f64| -> Vec<f64> { state.iter().zip(k).map(|(x, d)| x + h * d).collect() };

    let k1 = eval(state)?;
    let k2 = eval(&offset(&k1, dt / 2.0))?;
    let k3 = eval(&offset(&k2, dt / 2.0))?;
    let k4 = eval(&offset(&k3, dt))?;

    let mut next: Vec<f64> = (0..n)
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    for &i in frozen {
        next[i] = state[i];
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite { state: state.to_vec() });
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn wheel(inertia: f64, radius: f64, tire_resistance: f64, bearing_friction: f64) -> WheelParams {
        WheelParams { mass: 5.0, inertia, radius, tire_resistance, bearing_friction }
    }

    #[test]
    fn slip_examples() {
        assert_eq!(slip_ratio(2.0, 10.0, 0.2), 0.0);
        assert_eq!(slip_ratio(0.0, 5.0, 0.2), 1.0);
        assert_eq!(slip_ratio(1.0, 0.0, 0.2), -1.0);
        assert_relative_eq!(slip_ratio(1.0, 10.0, 0.2), 0.5, epsilon = 1e-15);
        assert_eq!(slip_ratio(0.0, 0.0, 0.2), 0.0);
    }

    #[test]
    fn adhesion_examples() {
        assert_eq!(adhesion_coefficient(0.0, 500.0).unwrap(), 0.0);
        assert_eq!(adhesion_coefficient(250.0, 500.0).unwrap(), 0.5);
        assert_relative_eq!(adhesion_coefficient(-50.0, 500.0).unwrap(), -0.1);
        assert_eq!(adhesion_coefficient(10.0, 0.0), Err(DynamicsError::NonPositiveLoad(0.0)));
        assert!(adhesion_coefficient(10.0, -1.0).is_err());
    }

    #[test]
    fn net_traction_examples() {
        assert_eq!(net_traction(0.5, 0.0), 0.5);
        assert_relative_eq!(net_traction(0.5, 0.1), 0.4, epsilon = 1e-15);
        assert_relative_eq!(net_traction(0.05, 0.1), -0.05, epsilon = 1e-15);
    }

    #[test]
    fn efficiency_examples() {
        assert_eq!(efficiency(0.4, 0.1, 1.0).unwrap(), 0.0);
        assert_eq!(efficiency(0.4, 0.0, 0.0).unwrap(), 1.0);
        assert_relative_eq!(efficiency(0.5, 0.1, 0.2).unwrap(), 0.5 / 0.6 * 0.8, epsilon = 1e-15);
        assert_relative_eq!(efficiency(0.5, 0.1, 0.2).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(efficiency(0.1, -0.1, 0.0), Err(DynamicsError::ZeroTractionSum));
    }

    #[test]
    fn wheel_accel_examples() {
        let p = wheel(0.5, 0.2, 0.01, 0.0);
        // torque exactly balancing ground force and tire resistance
        let fz = 500.0;
        let fh = 120.0;
        let balanced = WheelDynState {
            omega: 0.0,
            drive_torque: 0.2 * (fh + 0.01 * fz),
            horizontal_force: fh,
            vertical_load: fz,
        };
        assert_relative_eq!(wheel_angular_accel(&balanced, &p), 0.0, epsilon = 1e-12);

        let free = wheel(0.5, 0.2, 0.0, 0.0);
        let spin_up = WheelDynState { omega: 0.0, drive_torque: 10.0, horizontal_force: 0.0, vertical_load: 500.0 };
        assert_relative_eq!(wheel_angular_accel(&spin_up, &free), 20.0, epsilon = 1e-12);

        // F_t = rho_t F_z = 5 N
        let coast_params = wheel(0.5, 0.2, 0.01, 0.0);
        let coast = WheelDynState { omega: 0.0, drive_torque: 0.0, horizontal_force: 100.0, vertical_load: 500.0 };
        assert_relative_eq!(wheel_angular_accel(&coast, &coast_params), -42.0, epsilon = 1e-12);
    }

    #[test]
    fn bearing_friction_scales_with_speed() {
        let p = wheel(0.5, 0.2, 0.0, 2.0);
        let s = WheelDynState { omega: 10.0, drive_torque: 0.0, horizontal_force: 0.0, vertical_load: 100.0 };
        assert_relative_eq!(wheel_angular_accel(&s, &p), -0.2 * 2.0 * 10.0 / 0.5, epsilon = 1e-12);
    }

    #[test]
    fn body_accel_examples() {
        let (m, g, rho) = (139.0, 9.81, 0.05);
        let fdx = 80.0;
        assert_relative_eq!(body_accel(fdx + rho * m * g, fdx, rho, m, g), 0.0, epsilon = 1e-12);
        assert_relative_eq!(body_accel(200.0, 0.0, 0.0, 139.0, 9.81), 1.438_848_920_863_309_4, epsilon = 1e-12);
        assert!(body_accel(0.0, 100.0, 0.05, 139.0, 9.81) < 0.0);
    }

    #[test]
    fn directed_resistances_hold_a_standing_vehicle() {
        let p = wheel(0.4, 0.2, 0.02, 0.5);
        let rest = WheelDynState { omega: 0.0, drive_torque: 0.0, horizontal_force: 0.0, vertical_load: 300.0 };
        assert_eq!(wheel_accel_directed(&rest, &p), 0.0);
        assert_eq!(body_accel_directed(0.0, 0.0, 0.0, 0.05, 139.0, 9.81), 0.0);
        assert_eq!(body_accel_directed(0.0, 30.0, 0.0, 0.05, 139.0, 9.81), 0.0);
        // small torque below breakaway
        let nudge = WheelDynState { drive_torque: 0.5, ..rest };
        assert_eq!(wheel_accel_directed(&nudge, &p), 0.0);
        // forward rolling matches the plain balance
        let rolling = WheelDynState { omega: 5.0, drive_torque: 20.0, horizontal_force: 60.0, vertical_load: 300.0 };
        assert_eq!(wheel_accel_directed(&rolling, &p), wheel_angular_accel(&rolling, &p));
    }

    #[test]
    fn rk4_constant_and_linear() {
        let x = rk4_step(&[3.0, -1.5], &[], 0.1, &[], |x, _| vec![0.0; x.len()]).unwrap();
        assert_eq!(x, vec![3.0, -1.5]);
        let x = rk4_step(&[0.0], &[], 0.1, &[], |_, _| vec![1.0]).unwrap();
        assert_relative_eq!(x[0], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn rk4_exponential_matches_truncated_taylor() {
        // RK4 on x' = x reproduces the Taylor series of e^h through h^4.
        let h: f64 = 0.1;
        let oracle = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
        let x = rk4_step(&[1.0], &[], h, &[], |x, _| vec![x[0]]).unwrap();
        assert_relative_eq!(x[0], oracle, epsilon = 1e-14);
        assert_relative_eq!(x[0], 1.105_170_833_333_333, epsilon = 1e-14);
        assert!((x[0] - h.exp()).abs() < 1e-7);
    }

    #[test]
    fn rk4_frozen_entries_are_untouched() {
        let x = rk4_step(&[1.0, 0.3], &[2.0], 0.05, &[1], |x, u| vec![u[0] - x[1] * x[0], 5.0]).unwrap();
        assert_eq!(x[1], 0.3);
        assert!(x[0] > 1.0);
    }

    #[test]
    fn rk4_reports_non_finite_derivative() {
        let err = rk4_step(&[1.0], &[], 0.1, &[], |_, _| vec![f64::NAN]).unwrap_err();
        assert_eq!(err, DynamicsError::NonFinite { state: vec![1.0] });
    }

    #[test]
    fn vehicle_validation() {
        let w = wheel(0.4, 0.2, 0.02, 0.5);
        let mut v = VehicleParams { mass: 139.0, wheels: [w; 4], front_load_fraction: 54.0 / 139.0, gravity: 9.81 };
        assert!(v.validate().is_ok());
        v.front_load_fraction = 1.0;
        assert!(v.validate().is_err());
        v.front_load_fraction = 0.4;
        v.mass = 10.0;
        assert!(v.validate().unwrap_err().contains("summed wheel mass"));
        let loads = VehicleParams { mass: 139.0, ..v }.wheel_loads(300.0);
        assert_relative_eq!(loads.iter().sum::<f64>(), 139.0 * 9.81, epsilon = 1e-9);
    }
}
