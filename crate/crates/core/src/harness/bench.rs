//! Built-in benchmark: simulates the shipped scenarios, replays them
//! through the estimator and checks the scenario-level acceptance rules.

use std::path::Path;

use crate::analysis::{
    bin_data, detect_ground_change, fit_scale, goodness, section_stats, BinSpec, FitResult, SectionStats, SlipBin,
    Source, Weighting, DEFAULT_DETECTION_THRESHOLD, DEFAULT_DETECTION_WINDOW,
};
use crate::estimator::FilterConfig;
use crate::soil::{mu_of_s, SoilCatalog};

use super::csvio;
use super::{
    estimated_points, plan_sections, replay, simulate, true_points, EstimatorConfig, HarnessError, ReplayOutcome,
    Scenario, SectionPlan, SimulatedLog,
};

/// One scenario simulated and replayed through one filter.
#[derive(Debug, Clone)]
pub struct Run {
    pub label: String,
    pub scenario: Scenario,
    pub log: SimulatedLog,
    pub outcome: ReplayOutcome,
}

impl Run {
    pub fn new(label: &str, scenario: Scenario, cfg: &EstimatorConfig) -> Result<Self, HarnessError> {
        let log = simulate(&scenario)?;
        let outcome = replay(&log.records, cfg);
        Ok(Self { label: label.to_string(), scenario, log, outcome })
    }

    pub fn builtin(label: &str, scenario: &str, filter: FilterConfig) -> Result<Self, HarnessError> {
        let sc = Scenario::builtin(scenario).ok_or_else(|| HarnessError::Numerical(format!("no scenario {scenario}")))?;
        let cfg = EstimatorConfig { vehicle: sc.vehicle, filter };
        Self::new(label, sc, &cfg)
    }

    pub fn wheel(&self) -> usize {
        self.scenario.wheel_index()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.log.records.iter().map(|r| r.timestamp).collect()
    }

    pub fn plan(&self) -> SectionPlan {
        plan_sections(&self.scenario, &self.timestamps(), &self.log.truth)
    }

    /// Estimated adhesion of the instrumented wheel, aligned with the log
    /// (replays here never skip records).
    pub fn mu_estimates(&self) -> Vec<f64> {
        let w = self.wheel();
        self.outcome.estimates.iter().map(|e| e.state.mu()[w]).collect()
    }

    pub fn mu_truth(&self) -> Vec<f64> {
        let w = self.wheel();
        self.log.truth.iter().map(|t| t.mu[w]).collect()
    }

    fn aligned(&self) -> bool {
        self.outcome.skipped == 0 && self.outcome.estimates.len() == self.log.records.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(id: u8, title: &'static str, passed: bool, detail: String) -> CriterionResult {
    CriterionResult { id, title, passed, detail }
}

fn misaligned(id: u8, title: &'static str, run: &Run) -> CriterionResult {
    result(id, title, false, format!("{}: {} of {} records skipped", run.label, run.outcome.skipped, run.outcome.total))
}

/// R² and NRMSE of estimated vs true adhesion on the instrumented wheel,
/// leaving out transition zones.
pub fn tracking_metrics(run: &Run) -> Option<(f64, f64)> {
    let plan = run.plan();
    let (est, truth) = (run.mu_estimates(), run.mu_truth());
    let (mut o, mut p) = (Vec::new(), Vec::new());
    for (k, r) in run.log.records.iter().enumerate() {
        if plan.excluded.iter().any(|&(a, b)| r.timestamp >= a && r.timestamp < b) {
            continue;
        }
        o.push(truth[k]);
        p.push(est[k]);
    }
    goodness(&o, &p).ok().map(|(nrmse, r2)| (r2, nrmse))
}

pub fn tracking_fidelity(run: &Run) -> CriterionResult {
    const TITLE: &str = "tracking fidelity";
    if !run.aligned() {
        return misaligned(1, TITLE, run);
    }
    match tracking_metrics(run) {
        Some((r2, nrmse)) => result(
            1,
            TITLE,
            r2 >= 0.80 && nrmse <= 0.10,
            format!("{}: R2={r2:.4} NRMSE={nrmse:.4} (need R2>=0.80, NRMSE<=0.10)", run.label),
        ),
        None => result(1, TITLE, false, format!("{}: metrics undefined", run.label)),
    }
}

pub fn bin_spec_for(soil: &str) -> BinSpec {
    if soil == "grass" {
        BinSpec::GRASS
    } else {
        BinSpec::DEFAULT
    }
}

/// Bins and fits the estimated operating points of a uniform-soil run.
pub fn sweep_fit(run: &Run) -> Result<(String, f64, Vec<SlipBin>, FitResult), String> {
    let soil = &run.scenario.map.breakpoints()[0].soil;
    let params = run.scenario.catalog.get(soil).expect("map soils are in the catalog");
    let samples: Vec<(f64, f64)> = estimated_points(&run.outcome.estimates, run.wheel())
        .into_iter()
        .map(|p| (p.slip, p.mu))
        .collect();
    let bins = bin_data(&samples, &bin_spec_for(soil)).map_err(|e| e.to_string())?;
    let fit = fit_scale(&bins, &params.shape(), Weighting::Equal).map_err(|e| e.to_string())?;
    Ok((soil.clone(), params.a, bins, fit))
}

/// Largest deviation of the fitted scale from the catalog value when bins
/// are filled with exact curve values at their midpoints.
pub fn noiseless_round_trip(catalog: &SoilCatalog) -> f64 {
    catalog
        .iter()
        .map(|soil| {
            let spec = bin_spec_for(&soil.name);
            let samples: Vec<(f64, f64)> = (0..spec.count())
                .map(|i| {
                    let s = spec.min + (i as f64 + 0.5) * spec.width;
                    (s, mu_of_s(soil, s))
                })
                .collect();
            let bins = bin_data(&samples, &spec).expect("valid grid");
            let fit = fit_scale(&bins, &soil.shape(), Weighting::Equal).expect("non-degenerate");
            (fit.a - soil.a).abs()
        })
        .fold(0.0, f64::max)
}

pub fn curve_fit(sweeps: &[&Run]) -> CriterionResult {
    const TITLE: &str = "curve-fit round trip";
    let mut passed = true;
    let mut parts = Vec::new();
    for run in sweeps {
        match sweep_fit(run) {
            Ok((soil, a_true, _, fit)) => {
                let rel = (fit.a - a_true).abs() / a_true;
                passed &= rel < 0.05;
                parts.push(format!("{soil} a={:.4}/{a_true} ({:.2}%)", fit.a, 100.0 * rel));
            }
            Err(e) => {
                passed = false;
                parts.push(format!("{}: {e}", run.label));
            }
        }
    }
    let worst = noiseless_round_trip(&SoilCatalog::builtin());
    passed &= worst <= 1e-10;
    parts.push(format!("noiseless max error {worst:.1e}"));
    result(2, TITLE, passed, parts.join("; "))
}

/// Steps from the first soil switch until the instrumented wheel's estimate
/// first comes within `tol` of the truth.
pub fn reconvergence_steps(run: &Run, tol: f64) -> Option<usize> {
    let k0 = run.plan().switches.first()?.index;
    let (est, truth) = (run.mu_estimates(), run.mu_truth());
    (k0..est.len()).find(|&k| (est[k] - truth[k]).abs() < tol).map(|k| k - k0)
}

/// Sample variance of the instrumented wheel's estimate over the second
/// half of the run.
pub fn steady_variance(run: &Run) -> f64 {
    let mu = run.mu_estimates();
    let tail = &mu[mu.len() / 2..];
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn adaptation(step_adaptive: &Run, step_plain: &Run, steady_adaptive: &Run, steady_plain: &Run) -> CriterionResult {
    const TITLE: &str = "adaptation behaviour";
    for run in [step_adaptive, step_plain, steady_adaptive, steady_plain] {
        if !run.aligned() {
            return misaligned(6, TITLE, run);
        }
    }
    let fast = reconvergence_steps(step_adaptive, 0.05);
    let slow = reconvergence_steps(step_plain, 0.05);
    let faster = matches!((fast, slow), (Some(a), Some(b)) if a < b) || matches!((fast, slow), (Some(_), None));
    let va = steady_variance(steady_adaptive);
    let vp = steady_variance(steady_plain);
    let ratio = va / vp;
    let show = |s: Option<usize>| s.map_or("never".to_string(), |s| s.to_string());
    result(
        6,
        TITLE,
        faster && ratio <= 1.5,
        format!(
            "reconvergence steps {} vs {} (plain); steady variance ratio {ratio:.3} (need <= 1.5)",
            show(fast),
            show(slow)
        ),
    )
}

fn is_ignored_pair(a: &str, b: &str) -> bool {
    matches!((a, b), ("fine", "wet") | ("wet", "fine"))
}

/// Events on the instrumented wheel's estimate with the default settings.
pub fn detect(run: &Run, window: usize, threshold: f64) -> Vec<crate::analysis::ChangeEvent> {
    detect_ground_change(&run.timestamps(), &run.mu_estimates(), window, threshold).expect("aligned, window >= 2")
}

pub fn detection(multi: &Run, stationary: &Run, window: usize, threshold: f64) -> CriterionResult {
    const TITLE: &str = "ground-change detection";
    for run in [multi, stationary] {
        if !run.aligned() {
            return misaligned(7, TITLE, run);
        }
    }
    let tol = 2.0 * window as f64 * multi.scenario.file.dt;
    let events = detect(multi, window, threshold);
    let plan = multi.plan();
    let mut passed = true;
    let mut counts = Vec::new();
    for s in &plan.switches {
        let near = events.iter().filter(|e| (e.timestamp - s.timestamp).abs() <= tol).count();
        if is_ignored_pair(&s.from, &s.to) {
            counts.push(format!("{}->{}:{near}(ignored)", s.from, s.to));
        } else {
            passed &= near == 1;
            counts.push(format!("{}->{}:{near}", s.from, s.to));
        }
    }
    let stray = events
        .iter()
        .filter(|e| !plan.switches.iter().any(|s| (e.timestamp - s.timestamp).abs() <= tol))
        .count();
    let quiet = detect(stationary, window, threshold).len();
    passed &= stray == 0 && quiet == 0;
    result(
        7,
        TITLE,
        passed,
        format!("{} [{}] stray={stray}; {} events={quiet}", multi.label, counts.join(" "), stationary.label),
    )
}

/// Estimated and true section statistics of the instrumented wheel.
pub fn sections(run: &Run) -> (Vec<SectionStats>, Vec<SectionStats>) {
    let plan = run.plan();
    let w = run.wheel();
    let est = section_stats(&estimated_points(&run.outcome.estimates, w), &plan.sections, &plan.excluded, Source::Estimated)
        .expect("plan sections do not overlap");
    let truth = section_stats(&true_points(&run.log.records, &run.log.truth, w), &plan.sections, &plan.excluded, Source::Measured)
        .expect("plan sections do not overlap");
    (est, truth)
}

pub fn section_separation(run: &Run) -> CriterionResult {
    const TITLE: &str = "section separation";
    if !run.aligned() {
        return misaligned(8, TITLE, run);
    }
    let (est, truth) = sections(run);
    let band = |s: &SectionStats| (s.mean_mu.unwrap() - s.sd_mu.unwrap_or(0.0), s.mean_mu.unwrap() + s.sd_mu.unwrap_or(0.0));
    let grass: Vec<_> = est.iter().filter(|s| s.label == "grass" && s.is_defined()).collect();
    let hard: Vec<_> = est.iter().filter(|s| s.label == "hard" && s.is_defined()).collect();
    let mut passed = !grass.is_empty() && !hard.is_empty();
    let grass_top = grass.iter().map(|s| band(s).1).fold(f64::NEG_INFINITY, f64::max);
    let hard_bottom = hard.iter().map(|s| band(s).0).fold(f64::INFINITY, f64::min);
    passed &= grass_top < hard_bottom;
    let mut worst: f64 = 0.0;
    for (e, t) in est.iter().zip(&truth) {
        match (e.mean_mu, t.mean_mu) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs() / b.abs()),
            (None, None) => {}
            _ => passed = false,
        }
    }
    passed &= worst < 0.10;
    result(
        8,
        TITLE,
        passed,
        format!(
            "{}: grass mean+SD {grass_top:.4} < hard mean-SD {hard_bottom:.4}; worst section mean error {:.2}% (need < 10%)",
            run.label,
            100.0 * worst
        ),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub results: Vec<CriterionResult>,
    /// Output files as (name, contents), in a fixed order.
    pub files: Vec<(String, Vec<u8>)>,
}

impl BenchReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            out.push_str(&format!(
                "[{}] {:>2} {:<24} {}\n",
                if r.passed { "PASS" } else { "FAIL" },
                r.id,
                r.title,
                r.detail
            ));
        }
        out
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { file: dir.display().to_string(), source })?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            super::write_atomic(&path, bytes)
                .map_err(|source| HarnessError::Io { file: path.display().to_string(), source })?;
        }
        Ok(())
    }
}

const SWEEPS: [&str; 5] = ["sweep_hard", "sweep_fine", "sweep_wet", "sweep_coarse", "sweep_grass"];

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), super::DataError>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

/// Runs every benchmark scenario (independent runs in parallel) and
/// evaluates the scenario-level criteria.
pub fn run_bench() -> Result<BenchReport, HarnessError> {
    let adaptive = FilterConfig::default();
    let plain = FilterConfig::plain();
    let mut jobs: Vec<(String, &str, FilterConfig)> = vec![
        ("multi1".into(), "multi1", adaptive),
        ("multi2".into(), "multi2", adaptive),
        ("step".into(), "step", adaptive),
        ("step_plain".into(), "step", plain),
        ("stationary".into(), "stationary", adaptive),
        ("stationary_plain".into(), "stationary", plain),
    ];
    jobs.extend(SWEEPS.iter().map(|s| (s.to_string(), *s, adaptive)));

    let runs: Vec<Run> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(label, name, filter)| scope.spawn(move || Run::builtin(label, name, *filter)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    let get = |label: &str| runs.iter().find(|r| r.label == label).expect("job list covers every label");

    let window = DEFAULT_DETECTION_WINDOW;
    let threshold = DEFAULT_DETECTION_THRESHOLD;
    let sweeps: Vec<&Run> = SWEEPS.iter().map(|s| get(s)).collect();
    let results = vec![
        tracking_fidelity(get("multi2")),
        curve_fit(&sweeps),
        adaptation(get("step"), get("step_plain"), get("stationary"), get("stationary_plain")),
        detection(get("multi1"), get("stationary"), window, threshold),
        section_separation(get("multi2")),
    ];

    let mut files = Vec::new();
    for run in &runs {
        files.push((format!("{}_sensor.csv", run.label), csv_bytes(|b| csvio::write_sensor_log(b, &run.log))));
        files.push((
            format!("{}_estimates.csv", run.label),
            csv_bytes(|b| csvio::write_estimates(b, &run.outcome.estimates)),
        ));
    }
    for label in ["multi1", "stationary"] {
        let events = detect(get(label), window, threshold);
        files.push((format!("{label}_events.csv"), csv_bytes(|b| csvio::write_events(b, &events))));
    }
    let (est, truth) = sections(get("multi2"));
    let all: Vec<SectionStats> = est.into_iter().chain(truth).collect();
    files.push(("multi2_sections.csv".into(), csv_bytes(|b| csvio::write_sections(b, &all))));
    for run in &sweeps {
        if let Ok((_, _, bins, fit)) = sweep_fit(run) {
            files.push((format!("{}_fit.csv", run.label), csv_bytes(|b| csvio::write_fit(b, &fit))));
            files.push((format!("{}_bins.csv", run.label), csv_bytes(|b| csvio::write_bins(b, &bins, &fit))));
        }
    }
    let mut report = String::from("criterion,title,passed,detail\n");
    for r in &results {
        report.push_str(&format!("{},{},{},\"{}\"\n", r.id, r.title, r.passed, r.detail.replace('"', "'")));
    }
    files.push(("report.csv".into(), report.into_bytes()));
    Ok(BenchReport { results, files })
}
