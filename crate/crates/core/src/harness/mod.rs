//! Scenario-driven simulation, replay of logs through the estimator, and
//! the benchmark runner behind the command-line tool.

pub mod bench;
pub mod csvio;
pub mod scenario;
pub mod sim;

use std::fmt;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::analysis::{OperatingPoint, Section};
use crate::estimator::{EstimateRecord, SensorRecord, TractionFilter};

pub use scenario::{EstimatorConfig, Scenario};
pub use sim::{simulate, SimulatedLog, TruthRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

/// Ill-formed input data, with the 1-based line when known.
#[derive(Debug, Error, Clone, PartialEq)]
pub struct DataError {
    pub line: Option<u64>,
    pub message: String,
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("simulation diverged; last valid timestamp {last_valid} s")]
    NonFinite { last_valid: f64 },
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{file}: {source}")]
    Config { file: String, source: ConfigError },
    #[error("{file}: {source}")]
    Data { file: String, source: DataError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Numerical(String),
    #[error("{file}: {source}")]
    Io { file: String, source: std::io::Error },
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub estimates: Vec<EstimateRecord>,
    /// Records whose step failed and were left out.
    pub skipped: usize,
    pub total: usize,
}

impl ReplayOutcome {
    /// More than 1% of the records were skipped.
    pub fn failed(&self) -> bool {
        self.skipped * 100 > self.total
    }
}

/// Streams a log through a fresh filter.
pub fn replay(records: &[SensorRecord], cfg: &EstimatorConfig) -> ReplayOutcome {
    let mut filter = TractionFilter::new(cfg.vehicle, cfg.filter);
    let mut estimates = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for r in records {
        match filter.step(r) {
            Ok(e) => estimates.push(e),
            Err(_) => skipped += 1,
        }
    }
    ReplayOutcome { estimates, skipped, total: records.len() }
}

/// A change of soil under the vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct Switch {
    pub timestamp: f64,
    pub index: usize,
    pub from: String,
    pub to: String,
}

/// Time sections of a simulated drive, one per visited soil-map segment,
/// with the transition zones to leave out of statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionPlan {
    pub sections: Vec<Section>,
    pub excluded: Vec<(f64, f64)>,
    pub switches: Vec<Switch>,
}

/// Maps the soil map onto the time axis of a run using the true positions.
pub fn plan_sections(sc: &Scenario, timestamps: &[f64], truth: &[TruthRecord]) -> SectionPlan {
    let mut plan = SectionPlan { sections: Vec::new(), excluded: Vec::new(), switches: Vec::new() };
    if truth.is_empty() {
        return plan;
    }
    let dt = sc.file.dt;
    let end = timestamps[timestamps.len() - 1] + dt;
    let bps = sc.map.breakpoints();
    let mut segment = sc.map.segment_at(truth[0].position);
    let mut start = timestamps[0];
    for (k, tr) in truth.iter().enumerate() {
        let seg = sc.map.segment_at(tr.position);
        if seg != segment {
            plan.sections.push(Section { label: bps[segment].soil.clone(), start, end: timestamps[k] });
            plan.switches.push(Switch {
                timestamp: timestamps[k],
                index: k,
                from: bps[segment].soil.clone(),
                to: bps[seg].soil.clone(),
            });
            segment = seg;
            start = timestamps[k];
        }
    }
    plan.sections.push(Section { label: bps[segment].soil.clone(), start, end });

    let half = sc.file.transition_half_width;
    let near = |x: f64| bps.iter().skip(1).any(|b| (x - b.start).abs() < half);
    let mut open: Option<f64> = None;
    for (k, tr) in truth.iter().enumerate() {
        match (near(tr.position), open) {
            (true, None) => open = Some(timestamps[k]),
            (false, Some(a)) => {
                plan.excluded.push((a, timestamps[k]));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(a) = open {
        plan.excluded.push((a, end));
    }
    plan
}

/// Operating points of one wheel from the filter output.
pub fn estimated_points(estimates: &[EstimateRecord], wheel: usize) -> Vec<OperatingPoint> {
    estimates
        .iter()
        .map(|e| OperatingPoint { timestamp: e.timestamp, slip: e.slip[wheel], mu: e.state.mu()[wheel] })
        .collect()
}

/// Operating points of one wheel from the simulation truth.
pub fn true_points(records: &[SensorRecord], truth: &[TruthRecord], wheel: usize) -> Vec<OperatingPoint> {
    records
        .iter()
        .zip(truth)
        .map(|(r, t)| OperatingPoint { timestamp: r.timestamp, slip: t.slip[wheel], mu: t.mu[wheel] })
        .collect()
}
