//! CSV formats for sensor logs, estimate logs and analysis results.
//!
//! All files have a header row, comma separators and LF line endings.
//! Floats are written in their shortest round-trip form.

use std::io::{Read, Write};

use crate::analysis::{ChangeEvent, FitResult, SectionStats, SlipBin};
use crate::dynamics::WHEELS;
use crate::estimator::{EstimateRecord, SensorRecord, TractionState, STATE_DIM};

use super::sim::{SimulatedLog, TruthRecord};
use super::DataError;

pub const SENSOR_COLUMNS: [&str; 12] = [
    "timestamp", "omega1", "omega2", "omega3", "omega4", "speed", "torque1", "torque2", "torque3", "torque4",
    "front_load", "drawbar",
];

pub const TRUTH_COLUMNS: [&str; 12] = [
    "truth_mu1", "truth_mu2", "truth_mu3", "truth_mu4", "truth_slip1", "truth_slip2", "truth_slip3", "truth_slip4",
    "truth_speed", "truth_rho_s", "truth_position", "truth_soil",
];

const STATE_NAMES: [&str; STATE_DIM] = ["omega1", "omega2", "omega3", "omega4", "speed", "mu1", "mu2", "mu3", "mu4", "rho_s"];

pub fn estimate_columns() -> Vec<String> {
    let mut cols = vec!["timestamp".to_string()];
    cols.extend(STATE_NAMES.iter().map(|s| s.to_string()));
    cols.extend(STATE_NAMES.iter().map(|s| format!("var_{s}")));
    cols.extend((1..=WHEELS).map(|i| format!("slip{i}")));
    cols.push("lambda".into());
    cols.push("adaptation".into());
    cols
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn io_err(e: impl std::fmt::Display) -> DataError {
    DataError { line: None, message: e.to_string() }
}

/// Writes the sensor columns followed by the truth columns.
pub fn write_sensor_log<W: Write>(out: W, log: &SimulatedLog) -> Result<(), DataError> {
    let mut w = writer(out);
    let header: Vec<&str> = SENSOR_COLUMNS.iter().chain(&TRUTH_COLUMNS).copied().collect();
    w.write_record(&header).map_err(io_err)?;
    for (r, t) in log.records.iter().zip(&log.truth) {
        let mut row: Vec<String> = sensor_fields(r);
        row.extend(t.mu.iter().chain(&t.slip).map(|v| fmt(*v)));
        row.extend([fmt(t.speed), fmt(t.rho_s), fmt(t.position), t.soil.clone()]);
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Writes only the sensor columns.
pub fn write_sensor_records<W: Write>(out: W, records: &[SensorRecord]) -> Result<(), DataError> {
    let mut w = writer(out);
    w.write_record(SENSOR_COLUMNS).map_err(io_err)?;
    for r in records {
        w.write_record(sensor_fields(r)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn sensor_fields(r: &SensorRecord) -> Vec<String> {
    let mut row = vec![fmt(r.timestamp)];
    row.extend(r.omega.iter().map(|v| fmt(*v)));
    row.push(fmt(r.speed));
    row.extend(r.torque.iter().map(|v| fmt(*v)));
    row.push(fmt(r.front_load));
    row.push(fmt(r.drawbar));
    row
}

/// Column lookup by header name.
struct Columns {
    index: Vec<usize>,
}

impl Columns {
    fn find(headers: &csv::StringRecord, names: &[&str]) -> Result<Self, DataError> {
        let index = names
            .iter()
            .map(|n| {
                headers
                    .iter()
                    .position(|h| h == *n)
                    .ok_or_else(|| DataError { line: Some(1), message: format!("missing column `{n}`") })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { index })
    }

    fn floats(&self, rec: &csv::StringRecord, names: &[&str], line: u64) -> Result<Vec<f64>, DataError> {
        self.index
            .iter()
            .zip(names)
            .map(|(&i, name)| {
                let raw = rec.get(i).unwrap_or("");
                raw.trim().parse::<f64>().map_err(|_| DataError {
                    line: Some(line),
                    message: format!("column `{name}`: cannot parse `{raw}` as a number"),
                })
            })
            .collect()
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(input)
}

fn record_line(rec: &csv::StringRecord, fallback: u64) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(fallback)
}

fn csv_err(e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line());
    DataError { line, message: e.to_string() }
}

/// Reads the sensor columns of a log. Any other column, including every
/// truth column, is ignored.
pub fn read_sensor_log<R: Read>(input: R) -> Result<Vec<SensorRecord>, DataError> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let cols = Columns::find(&headers, &SENSOR_COLUMNS)?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let v = cols.floats(&rec, &SENSOR_COLUMNS, record_line(&rec, k as u64 + 2))?;
        out.push(SensorRecord {
            timestamp: v[0],
            omega: [v[1], v[2], v[3], v[4]],
            speed: v[5],
            torque: [v[6], v[7], v[8], v[9]],
            front_load: v[10],
            drawbar: v[11],
        });
    }
    Ok(out)
}

/// Reads the truth columns of a simulated log.
pub fn read_truth<R: Read>(input: R) -> Result<Vec<TruthRecord>, DataError> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let numeric = &TRUTH_COLUMNS[..11];
    let cols = Columns::find(&headers, numeric)?;
    let soil_col = Columns::find(&headers, &["truth_soil"])?.index[0];
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let v = cols.floats(&rec, numeric, record_line(&rec, k as u64 + 2))?;
        out.push(TruthRecord {
            mu: [v[0], v[1], v[2], v[3]],
            slip: [v[4], v[5], v[6], v[7]],
            speed: v[8],
            rho_s: v[9],
            position: v[10],
            soil: rec.get(soil_col).unwrap_or("").to_string(),
        });
    }
    Ok(out)
}

pub fn write_estimates<W: Write>(out: W, estimates: &[EstimateRecord]) -> Result<(), DataError> {
    let mut w = writer(out);
    w.write_record(estimate_columns()).map_err(io_err)?;
    for e in estimates {
        let mut row = vec![fmt(e.timestamp)];
        row.extend(e.state.0.iter().chain(&e.variance).chain(&e.slip).map(|v| fmt(*v)));
        row.push(fmt(e.lambda));
        row.push(fmt(e.adaptation));
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_estimates<R: Read>(input: R) -> Result<Vec<EstimateRecord>, DataError> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let names = estimate_columns();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let cols = Columns::find(&headers, &names)?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let v = cols.floats(&rec, &names, record_line(&rec, k as u64 + 2))?;
        let mut state = [0.0; STATE_DIM];
        state.copy_from_slice(&v[1..11]);
        let mut variance = [0.0; STATE_DIM];
        variance.copy_from_slice(&v[11..21]);
        out.push(EstimateRecord {
            timestamp: v[0],
            state: TractionState(state),
            variance,
            slip: [v[21], v[22], v[23], v[24]],
            lambda: v[25],
            adaptation: v[26],
        });
    }
    Ok(out)
}

pub fn write_fit<W: Write>(out: W, fit: &FitResult) -> Result<(), DataError> {
    let mut w = writer(out);
    w.write_record(["a", "p", "alpha1", "alpha2", "nrmse", "r2", "bins_used"]).map_err(io_err)?;
    w.write_record([
        fmt(fit.a),
        fmt(fit.shape.p),
        fmt(fit.shape.alpha1),
        fmt(fit.shape.alpha2),
        opt(fit.nrmse),
        opt(fit.r2),
        fit.bins_used.to_string(),
    ])
    .map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Plot-ready bin table with the fitted model value at each midpoint.
pub fn write_bins<W: Write>(out: W, bins: &[SlipBin], fit: &FitResult) -> Result<(), DataError> {
    let mut w = writer(out);
    w.write_record(["s_lo", "s_hi", "s_mid", "count", "mean_mu", "sd_mu", "model_mu"]).map_err(io_err)?;
    for b in bins {
        w.write_record([
            fmt(b.lo),
            fmt(b.hi),
            fmt(b.mid()),
            b.count.to_string(),
            opt(b.mean),
            opt(b.sd),
            fmt(fit.a * fit.shape.value(b.mid())),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_sections<W: Write>(out: W, stats: &[SectionStats]) -> Result<(), DataError> {
    let mut w = writer(out);
    w.write_record(["label", "start", "end", "source", "count", "mean_s", "sd_s", "mean_mu", "sd_mu"])
        .map_err(io_err)?;
    for s in stats {
        w.write_record([
            s.label.clone(),
            fmt(s.start),
            fmt(s.end),
            s.source.as_str().to_string(),
            s.count.to_string(),
            opt(s.mean_s),
            opt(s.sd_s),
            opt(s.mean_mu),
            opt(s.sd_mu),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_events<W: Write>(out: W, events: &[ChangeEvent]) -> Result<(), DataError> {
    let mut w = writer(out);
    w.write_record(["timestamp", "index", "statistic"]).map_err(io_err)?;
    for e in events {
        w.write_record([fmt(e.timestamp), e.index.to_string(), fmt(e.statistic)]).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
