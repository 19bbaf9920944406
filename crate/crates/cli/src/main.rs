//! `traction`: simulate drives, replay logs through the estimator and
//! analyse the resulting estimates.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use traction_core::analysis::{
    bin_data, detect_ground_change, fit_scale, section_stats, AnalysisError, BinSpec, Source, Weighting,
    DEFAULT_DETECTION_THRESHOLD, DEFAULT_DETECTION_WINDOW,
};
use traction_core::dynamics::WHEELS;
use traction_core::estimator::EstimateRecord;
use traction_core::harness::scenario::BUILTIN_SCENARIOS;
use traction_core::harness::{
    bench, csvio, estimated_points, plan_sections, replay, simulate, true_points, write_atomic, ConfigError,
    DataError, EstimatorConfig, HarnessError, Scenario, SimulatedLog,
};
use traction_core::soil::CurveShape;

#[derive(Parser)]
#[command(name = "traction", version, about = "Traction parameter identification for wheeled vehicles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a drive and write the sensor log (with truth columns).
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a sensor log through the estimator.
    Estimate {
        #[arg(long)]
        log: PathBuf,
        /// Estimator config (TOML); built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bin estimated operating points by slip and fit the curve scale.
    Fit {
        #[arg(long)]
        estimates: PathBuf,
        /// 1-based wheel index.
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=WHEELS as i64))]
        wheel: u8,
        /// Curve shape as `p,alpha1,alpha2`.
        #[arg(long, value_parser = parse_shape, default_value = "0.52,0.01,-11.36")]
        shape: CurveShape,
        /// Slip bins as `width,min,max`.
        #[arg(long, value_parser = parse_bins, default_value = "0.01,0.05,0.6")]
        bins: BinSpec,
        #[arg(long, value_enum, default_value_t = WeightArg::Equal)]
        weighting: WeightArg,
        /// Also write the per-bin table here.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-section slip and adhesion statistics with transition zones left out.
    Sections {
        #[arg(long)]
        estimates: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Simulated sensor log providing the positions; when omitted the
        /// scenario is simulated again.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=WHEELS as i64))]
        wheel: u8,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect ground changes from shifts in the adhesion estimate.
    Detect {
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=WHEELS as i64))]
        wheel: u8,
        #[arg(long, default_value_t = DEFAULT_DETECTION_WINDOW, value_parser = parse_window)]
        window: usize,
        #[arg(long, default_value_t = DEFAULT_DETECTION_THRESHOLD, value_parser = parse_threshold)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in benchmark scenarios and print a pass/fail table.
    Bench {
        /// Write logs, fits and the report here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ScenarioArg {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Name of a built-in scenario.
    #[arg(long, value_parser = builtin_names())]
    builtin: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightArg {
    Equal,
    Count,
}

fn builtin_names() -> Vec<&'static str> {
    BUILTIN_SCENARIOS.iter().map(|(n, _)| *n).collect()
}

fn triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("`{x}` is not a number")))
        .collect::<Result<_, _>>()?;
    let v: [f64; 3] = v.try_into().map_err(|_| "expected three comma-separated numbers".to_string())?;
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err("values must be finite".into())
    }
}

fn parse_shape(s: &str) -> Result<CurveShape, String> {
    let [p, alpha1, alpha2] = triple(s)?;
    Ok(CurveShape { p, alpha1, alpha2 })
}

fn parse_bins(s: &str) -> Result<BinSpec, String> {
    let [width, min, max] = triple(s)?;
    let spec = BinSpec { width, min, max };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn parse_window(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 2 => Ok(n),
        _ => Err("must be an integer >= 2".into()),
    }
}

fn parse_threshold(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err("must be a number > 0".into()),
    }
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

const USAGE: u8 = 1;
const DATA: u8 = 2;
const NUMERICAL: u8 = 3;

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match e {
            HarnessError::Sim(_) | HarnessError::Numerical(_) => NUMERICAL,
            _ => DATA,
        };
        fail(code, e.to_string())
    }
}

fn analysis_failure(file: &Path, e: AnalysisError) -> Failure {
    let code = match e {
        AnalysisError::InvalidRange(_) => USAGE,
        AnalysisError::LengthMismatch(..) => DATA,
        _ => NUMERICAL,
    };
    fail(code, format!("{}: {e}", file.display()))
}

fn config_error(file: &Path, source: ConfigError) -> HarnessError {
    HarnessError::Config { file: file.display().to_string(), source }
}

fn data_error(file: &Path, source: DataError) -> HarnessError {
    HarnessError::Data { file: file.display().to_string(), source }
}

fn open(path: &Path) -> Result<std::fs::File, HarnessError> {
    std::fs::File::open(path).map_err(|source| HarnessError::Io { file: path.display().to_string(), source })
}

fn load_scenario(arg: &ScenarioArg) -> Result<Scenario, HarnessError> {
    match (&arg.scenario, &arg.builtin) {
        (Some(path), _) => Scenario::load(path).map_err(|e| config_error(path, e)),
        (None, Some(name)) => Ok(Scenario::builtin(name).expect("clap checked the name")),
        (None, None) => unreachable!("clap requires one of the two"),
    }
}

fn read_estimates(path: &Path) -> Result<Vec<EstimateRecord>, HarnessError> {
    csvio::read_estimates(open(path)?).map_err(|e| data_error(path, e))
}

/// Serialises into memory, then writes atomically.
fn write_csv(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<(), DataError>) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| data_error(path, e))?;
    write_atomic(path, &buf).map_err(|source| HarnessError::Io { file: path.display().to_string(), source })
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate { scenario, out } => {
            let sc = load_scenario(&scenario)?;
            let log = simulate(&sc).map_err(HarnessError::from)?;
            write_csv(&out, |b| csvio::write_sensor_log(b, &log))?;
            eprintln!("{}: {} records", out.display(), log.records.len());
        }
        Command::Estimate { log, config, out } => {
            let cfg = match &config {
                Some(path) => EstimatorConfig::load(path).map_err(|e| config_error(path, e))?,
                None => EstimatorConfig::default(),
            };
            let records = csvio::read_sensor_log(open(&log)?).map_err(|e| data_error(&log, e))?;
            let outcome = replay(&records, &cfg);
            write_csv(&out, |b| csvio::write_estimates(b, &outcome.estimates))?;
            eprintln!("{}: {} estimates, {} records skipped", out.display(), outcome.estimates.len(), outcome.skipped);
            if outcome.failed() {
                return Err(fail(
                    NUMERICAL,
                    format!("{}: {} of {} records skipped", log.display(), outcome.skipped, outcome.total),
                ));
            }
        }
        Command::Fit { estimates, wheel, shape, bins, weighting, table, out } => {
            let est = read_estimates(&estimates)?;
            let samples: Vec<(f64, f64)> =
                estimated_points(&est, wheel as usize - 1).into_iter().map(|p| (p.slip, p.mu)).collect();
            let binned = bin_data(&samples, &bins).map_err(|e| analysis_failure(&estimates, e))?;
            let weighting = match weighting {
                WeightArg::Equal => Weighting::Equal,
                WeightArg::Count => Weighting::Count,
            };
            let fit = fit_scale(&binned, &shape, weighting).map_err(|e| analysis_failure(&estimates, e))?;
            write_csv(&out, |b| csvio::write_fit(b, &fit))?;
            if let Some(path) = &table {
                write_csv(path, |b| csvio::write_bins(b, &binned, &fit))?;
            }
            let show = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
            println!("a = {:.4}  NRMSE = {}  R2 = {}  bins = {}", fit.a, show(fit.nrmse), show(fit.r2), fit.bins_used);
        }
        Command::Sections { estimates, scenario, log, wheel, out } => {
            let sc = load_scenario(&scenario)?;
            let est = read_estimates(&estimates)?;
            let sim = match &log {
                Some(path) => {
                    let records = csvio::read_sensor_log(open(path)?).map_err(|e| data_error(path, e))?;
                    let truth = csvio::read_truth(open(path)?).map_err(|e| data_error(path, e))?;
                    SimulatedLog { records, truth }
                }
                None => simulate(&sc).map_err(HarnessError::from)?,
            };
            let timestamps: Vec<f64> = sim.records.iter().map(|r| r.timestamp).collect();
            let plan = plan_sections(&sc, &timestamps, &sim.truth);
            let w = wheel as usize - 1;
            let mut stats = section_stats(&estimated_points(&est, w), &plan.sections, &plan.excluded, Source::Estimated)
                .map_err(|e| analysis_failure(&estimates, e))?;
            if log.is_some() {
                let truth = true_points(&sim.records, &sim.truth, w);
                let measured = section_stats(&truth, &plan.sections, &plan.excluded, Source::Measured)
                    .map_err(|e| analysis_failure(&estimates, e))?;
                stats.extend(measured);
            }
            write_csv(&out, |b| csvio::write_sections(b, &stats))?;
            for s in &stats {
                let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                println!(
                    "{:<8} {:>8.2}..{:<8.2} {:<9} n={:<6} s={} mu={}",
                    s.label,
                    s.start,
                    s.end,
                    s.source.as_str(),
                    s.count,
                    show(s.mean_s),
                    show(s.mean_mu)
                );
            }
        }
        Command::Detect { estimates, wheel, window, threshold, out } => {
            let est = read_estimates(&estimates)?;
            let t: Vec<f64> = est.iter().map(|e| e.timestamp).collect();
            let mu: Vec<f64> = est.iter().map(|e| e.state.mu()[wheel as usize - 1]).collect();
            let events = detect_ground_change(&t, &mu, window, threshold).map_err(|e| analysis_failure(&estimates, e))?;
            write_csv(&out, |b| csvio::write_events(b, &events))?;
            for e in &events {
                println!("{:.2} s (z = {:.2})", e.timestamp, e.statistic);
            }
        }
        Command::Bench { out_dir } => {
            let report = bench::run_bench()?;
            print!("{}", report.table());
            if let Some(dir) = &out_dir {
                report.write_to(dir)?;
            }
            if !report.all_passed() {
                return Err(fail(NUMERICAL, "benchmark criteria failed"));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
