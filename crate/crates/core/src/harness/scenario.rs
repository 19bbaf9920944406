//! Scenario and estimator configuration files (TOML).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{VehicleParams, WheelParams, WHEELS};
use crate::estimator::FilterConfig;
use crate::soil::{Breakpoint, SoilCatalog, SoilCurveParams, SoilError, SoilMap};

use super::ConfigError;

/// Vehicle description with four identical wheels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleSpec {
    pub mass: f64,
    pub front_load_fraction: f64,
    pub gravity: f64,
    pub wheel: WheelParams,
}

impl Default for VehicleSpec {
    fn default() -> Self {
        Self {
            mass: 139.0,
            front_load_fraction: 54.0 / 139.0,
            gravity: 9.81,
            wheel: WheelParams { mass: 5.0, inertia: 0.4, radius: 0.2, tire_resistance: 0.02, bearing_friction: 0.5 },
        }
    }
}

impl VehicleSpec {
    pub fn params(&self) -> VehicleParams {
        VehicleParams {
            mass: self.mass,
            wheels: [self.wheel; WHEELS],
            front_load_fraction: self.front_load_fraction,
            gravity: self.gravity,
        }
    }
}

/// Piecewise-linear function of time given as `[t, value]` points, held
/// constant outside the covered range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub points: Vec<[f64; 2]>,
}

impl Profile {
    pub fn constant(value: f64) -> Self {
        Self { points: vec![[0.0, value]] }
    }

    fn validate(&self) -> Result<(), String> {
        if self.points.is_empty() {
            return Err("points must not be empty".into());
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err("points must be finite".into());
        }
        if let Some(w) = self.points.windows(2).find(|w| !(w[1][0] > w[0][0])) {
            return Err(format!("times must be strictly increasing ({} then {})", w[0][0], w[1][0]));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        let p = &self.points;
        let i = p.partition_point(|q| q[0] <= t);
        if i == 0 {
            return p[0][1];
        }
        if i == p.len() {
            return p[i - 1][1];
        }
        let ([t0, v0], [t1, v1]) = (p[i - 1], p[i]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

/// Proportional wheel-speed controller with torque and power limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// N m per rad/s of speed error.
    pub gain: f64,
    /// N m per wheel.
    pub max_torque: f64,
    /// W per wheel.
    pub max_power: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { gain: 200.0, max_torque: 80.0, max_power: 400.0 }
    }
}

impl ControllerConfig {
    pub fn torque(&self, command: f64, omega: f64) -> f64 {
        let mut limit = self.max_torque;
        if omega != 0.0 {
            limit = limit.min(self.max_power / omega.abs());
        }
        (self.gain * (command - omega)).clamp(-limit, limit)
    }
}

/// Drawbar pull of the towed implement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ToolProfile {
    /// Pull depends on the soil under the vehicle (N per soil name),
    /// multiplied by `1 + roughness * r(t)` with `r` a unit-variance
    /// first-order Gauss-Markov process.
    Soil {
        pull: BTreeMap<String, f64>,
        #[serde(default)]
        roughness: f64,
        #[serde(default = "default_correlation_time")]
        correlation_time: f64,
    },
    /// Pull that drives the vehicle through a linear sweep of target slip:
    /// `(a * g(s_target) - rho_s) * m * g` for the soil under the vehicle.
    Sweep { slip_start: f64, slip_end: f64 },
    /// Pull as a function of time.
    Profile { points: Vec<[f64; 2]> },
}

fn default_correlation_time() -> f64 {
    0.1
}

/// Standard deviations of the injected sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub omega: f64,
    pub speed: f64,
    pub torque: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { omega: 0.05, speed: 0.03, torque: 0.1 }
    }
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec { omega: 0.0, speed: 0.0, torque: 0.0 };
}

fn default_dt() -> f64 {
    0.01
}

fn default_substeps() -> usize {
    10
}

fn default_wheel() -> usize {
    WHEELS
}

/// Scenario file as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Simulated time (s).
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    /// Integration substeps per logged step.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Half-width (m) of the zone around each soil boundary whose samples
    /// are excluded from section statistics.
    #[serde(default)]
    pub transition_half_width: f64,
    /// Wheel (1-4) analysed by default.
    #[serde(default = "default_wheel")]
    pub instrumented_wheel: usize,
    #[serde(default)]
    pub vehicle: VehicleSpec,
    /// Soil catalog; the built-in one when absent.
    #[serde(default)]
    pub soils: Option<Vec<SoilCurveParams>>,
    pub soil_map: Vec<Breakpoint>,
    pub command: Profile,
    #[serde(default)]
    pub controller: ControllerConfig,
    pub tool: ToolProfile,
    #[serde(default)]
    pub noise: NoiseSpec,
}

/// A validated scenario with resolved catalog and soil map.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub vehicle: VehicleParams,
    pub catalog: SoilCatalog,
    pub map: SoilMap,
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.into(), message: message.into() }
}

fn soil_error(err: SoilError) -> ConfigError {
    match err {
        SoilError::UnknownSoil { index, name } => invalid(format!("soil_map[{index}].soil"), format!("unknown soil `{name}`")),
        SoilError::InvalidMap(m) => invalid("soil_map", m),
        other => invalid("soils", other.to_string()),
    }
}

fn check_vehicle(spec: &VehicleSpec) -> Result<VehicleParams, ConfigError> {
    let params = spec.params();
    spec.wheel.validate().map_err(|m| invalid("vehicle.wheel", m))?;
    params.validate().map_err(|m| invalid("vehicle", m))?;
    Ok(params)
}

impl Scenario {
    pub fn from_file(file: ScenarioFile) -> Result<Self, ConfigError> {
        let positive = |path: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(path, format!("must be a finite value > 0, got {v}")))
            }
        };
        positive("duration", file.duration)?;
        positive("dt", file.dt)?;
        if file.duration < file.dt {
            return Err(invalid("duration", "must cover at least one step"));
        }
        if file.substeps == 0 {
            return Err(invalid("substeps", "must be >= 1"));
        }
        if !(file.transition_half_width >= 0.0) {
            return Err(invalid("transition_half_width", "must be >= 0"));
        }
        if !(1..=WHEELS).contains(&file.instrumented_wheel) {
            return Err(invalid("instrumented_wheel", format!("must be 1..={WHEELS}")));
        }
        let vehicle = check_vehicle(&file.vehicle)?;
        let catalog = match &file.soils {
            Some(list) => SoilCatalog::new(list.clone()).map_err(soil_error)?,
            None => SoilCatalog::builtin(),
        };
        let map = SoilMap::new(file.soil_map.clone(), &catalog).map_err(soil_error)?;
        file.command.validate().map_err(|m| invalid("command", m))?;
        let c = &file.controller;
        for (name, v) in [("gain", c.gain), ("max_torque", c.max_torque), ("max_power", c.max_power)] {
            positive(&format!("controller.{name}"), v)?;
        }
        match &file.tool {
            ToolProfile::Soil { pull, roughness, correlation_time } => {
                for b in map.breakpoints() {
                    if !pull.contains_key(&b.soil) {
                        return Err(invalid("tool.pull", format!("no pull given for soil `{}`", b.soil)));
                    }
                }
                for (name, v) in pull {
                    if catalog.get(name).is_none() {
                        return Err(invalid(format!("tool.pull.{name}"), "unknown soil"));
                    }
                    if !(*v >= 0.0) {
                        return Err(invalid(format!("tool.pull.{name}"), format!("must be >= 0, got {v}")));
                    }
                }
                if !(*roughness >= 0.0 && roughness.is_finite()) {
                    return Err(invalid("tool.roughness", "must be >= 0"));
                }
                positive("tool.correlation_time", *correlation_time)?;
            }
            ToolProfile::Sweep { slip_start, slip_end } => {
                for (name, v) in [("slip_start", slip_start), ("slip_end", slip_end)] {
                    if !(0.0..1.0).contains(v) {
                        return Err(invalid(format!("tool.{name}"), format!("must lie in [0, 1), got {v}")));
                    }
                }
            }
            ToolProfile::Profile { points } => {
                Profile { points: points.clone() }.validate().map_err(|m| invalid("tool.points", m))?;
            }
        }
        let n = &file.noise;
        for (name, v) in [("omega", n.omega), ("speed", n.speed), ("torque", n.torque)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("noise.{name}"), format!("must be >= 0, got {v}")));
            }
        }
        Ok(Self { file, vehicle, catalog, map })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    /// One of the scenarios shipped with the crate, see [`BUILTIN_SCENARIOS`].
    pub fn builtin(name: &str) -> Option<Self> {
        let text = BUILTIN_SCENARIOS.iter().find(|(n, _)| *n == name)?.1;
        Some(Self::from_toml_str(text).expect("built-in scenario is valid"))
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    /// Number of logged steps.
    pub fn steps(&self) -> usize {
        (self.file.duration / self.file.dt).round() as usize
    }

    /// Zero-based index of the instrumented wheel.
    pub fn wheel_index(&self) -> usize {
        self.file.instrumented_wheel - 1
    }

    /// Copy with all sensor noise removed.
    pub fn noiseless(&self) -> Self {
        let mut out = self.clone();
        out.file.noise = NoiseSpec::NONE;
        out
    }
}

pub const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("multi1", include_str!("../../scenarios/multi1.toml")),
    ("multi2", include_str!("../../scenarios/multi2.toml")),
    ("step", include_str!("../../scenarios/step.toml")),
    ("stationary", include_str!("../../scenarios/stationary.toml")),
    ("sweep_hard", include_str!("../../scenarios/sweep_hard.toml")),
    ("sweep_fine", include_str!("../../scenarios/sweep_fine.toml")),
    ("sweep_wet", include_str!("../../scenarios/sweep_wet.toml")),
    ("sweep_coarse", include_str!("../../scenarios/sweep_coarse.toml")),
    ("sweep_grass", include_str!("../../scenarios/sweep_grass.toml")),
];

/// Estimator configuration file: vehicle model and filter tuning. Every
/// table is optional.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorFile {
    pub vehicle: VehicleSpec,
    pub filter: FilterConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub vehicle: VehicleParams,
    pub filter: FilterConfig,
}

impl EstimatorConfig {
    pub fn from_file(file: EstimatorFile) -> Result<Self, ConfigError> {
        let vehicle = check_vehicle(&file.vehicle)?;
        file.filter.validate().map_err(|(path, m)| invalid(format!("filter.{path}"), m))?;
        Ok(Self { vehicle, filter: file.filter })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let file: EstimatorFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(e.to_string()))?;
        Self::from_toml_str(&text)
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::from_file(EstimatorFile::default()).expect("defaults are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
duration = 1.0
soil_map = [{ start = 0.0, soil = "hard" }]
command = { points = [[0.0, 6.0]] }
tool = { kind = "profile", points = [[0.0, 100.0]] }
"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let sc = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(sc.file.dt, 0.01);
        assert_eq!(sc.steps(), 100);
        assert_eq!(sc.wheel_index(), 3);
        assert_eq!(sc.catalog.len(), 5);
        assert_eq!(sc.file.noise, NoiseSpec::default());
    }

    #[test]
    fn errors_name_the_offending_field() {
        let bad = MINIMAL.replace("soil = \"hard\"", "soil = \"clay\"");
        let err = Scenario::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("soil_map[0].soil"), "{err}");
        let bad = MINIMAL.replace("duration = 1.0", "duration = -1.0");
        assert!(Scenario::from_toml_str(&bad).unwrap_err().to_string().contains("duration"));
        let bad = format!("{MINIMAL}\n[vehicle.wheel]\nmass = 5.0\ninertia = 0.4\nradius = 0.0\ntire_resistance = 0.0\nbearing_friction = 0.0\n");
        let err = Scenario::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("vehicle.wheel") && err.contains("radius"), "{err}");
        let bad = format!("{MINIMAL}\nbogus = 1\n");
        let err = Scenario::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn soil_tool_needs_every_mapped_soil() {
        let text = MINIMAL.replace(
            "tool = { kind = \"profile\", points = [[0.0, 100.0]] }",
            "tool = { kind = \"soil\", pull = { grass = 10.0 } }",
        );
        let err = Scenario::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("tool.pull"), "{err}");
    }

    #[test]
    fn profile_interpolates_and_holds() {
        let p = Profile { points: vec![[1.0, 0.0], [3.0, 4.0]] };
        assert_eq!(p.at(0.0), 0.0);
        assert_eq!(p.at(2.0), 2.0);
        assert_eq!(p.at(3.0), 4.0);
        assert_eq!(p.at(10.0), 4.0);
        assert_eq!(Profile::constant(6.0).at(123.0), 6.0);
    }

    #[test]
    fn controller_saturates() {
        let c = ControllerConfig::default();
        assert_eq!(c.torque(6.0, 6.0), 0.0);
        assert_eq!(c.torque(6.0, 5.9), 200.0 * (6.0 - 5.9));
        assert_eq!(c.torque(100.0, 0.0), 80.0);
        assert_eq!(c.torque(100.0, 8.0), 50.0);
    }

    #[test]
    fn builtins_load() {
        for (name, _) in BUILTIN_SCENARIOS {
            let sc = Scenario::builtin(name).unwrap();
            assert_eq!(sc.name(), *name);
        }
        assert!(Scenario::builtin("nope").is_none());
    }

    #[test]
    fn estimator_config_defaults_and_errors() {
        let cfg = EstimatorConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, EstimatorConfig::default());
        let err = EstimatorConfig::from_toml_str("[filter.process_noise]\nmu = -1.0\n").unwrap_err().to_string();
        assert!(err.contains("filter.process_noise.mu"), "{err}");
        let cfg = EstimatorConfig::from_toml_str("[filter]\nadaptive = false\n").unwrap();
        assert!(!cfg.filter.adaptive);
    }
}
