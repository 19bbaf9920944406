//! Offline analysis of estimate logs: slip binning, curve-scale fitting,
//! goodness-of-fit metrics, per-section statistics and ground-change
//! detection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::soil::CurveShape;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("no non-empty bins to fit")]
    NoData,
    #[error("curve shape is zero at every bin midpoint")]
    DegenerateFit,
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty sequence")]
    Empty,
    #[error("observations are constant; NRMSE and R² are undefined")]
    ConstantObserved,
    #[error("invalid range: {0}")]
    InvalidRange(String),
}

/// Samples falling in `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean: Option<f64>,
    /// Sample standard deviation; `None` below two samples.
    pub sd: Option<f64>,
}

impl SlipBin {
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Binning grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinSpec {
    pub width: f64,
    pub min: f64,
    pub max: f64,
}

impl BinSpec {
    /// 1% bins on [0.05, 0.60).
    pub const DEFAULT: BinSpec = BinSpec { width: 0.01, min: 0.05, max: 0.60 };
    /// Grass is only evaluated up to 40% slip.
    pub const GRASS: BinSpec = BinSpec { width: 0.01, min: 0.05, max: 0.40 };

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(AnalysisError::InvalidRange(format!("bin width must be > 0, got {}", self.width)));
        }
        if !(self.min < self.max) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(AnalysisError::InvalidRange(format!("need min < max, got [{}, {})", self.min, self.max)));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        // tolerate floating error in (max - min) / width, e.g. 0.55 / 0.01
        ((self.max - self.min) / self.width - 1e-9).ceil().max(1.0) as usize
    }

    fn edge(&self, i: usize) -> f64 {
        (self.min + i as f64 * self.width).min(self.max)
    }
}

impl Default for BinSpec {
    fn default() -> Self {
        Self::DEFAULT
    }
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    // shifted by the first value so that identical samples give an exact mean
    let first = values[0];
    let mean = first + values.iter().map(|v| v - first).sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (Some(mean), Some((ss / (n - 1) as f64).sqrt()))
}

/// Groups `(s, mu)` samples into uniform slip bins. Samples outside
/// `[min, max)` or with a non-finite value are dropped; empty bins stay.
pub fn bin_data(samples: &[(f64, f64)], spec: &BinSpec) -> Result<Vec<SlipBin>, AnalysisError> {
    spec.validate()?;
    let n = spec.count();
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); n];
    for &(s, mu) in samples {
        if !(s >= spec.min && s < spec.max) || !mu.is_finite() {
            continue;
        }
        let mut i = (((s - spec.min) / spec.width).floor() as usize).min(n - 1);
        // guard the floor against edge rounding
        if s < spec.edge(i) {
            i -= 1;
        } else if i + 1 < n && s >= spec.edge(i + 1) {
            i += 1;
        }
        members[i].push(mu);
    }
    Ok(members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let (mean, sd) = mean_sd(m);
            SlipBin { lo: spec.edge(i), hi: spec.edge(i + 1), count: m.len(), mean, sd }
        })
        .collect())
}

/// How bins enter the least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Equal,
    Count,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub a: f64,
    pub shape: CurveShape,
    /// `None` when the bin means are constant.
    pub nrmse: Option<f64>,
    pub r2: Option<f64>,
    pub bins_used: usize,
}

/// Least-squares scale `a` of `mu = a * g(s)` over the bin means, with the
/// shape `g` held fixed and `g` evaluated at bin midpoints.
pub fn fit_scale(bins: &[SlipBin], shape: &CurveShape, weighting: Weighting) -> Result<FitResult, AnalysisError> {
    let used: Vec<(f64, f64, f64)> = bins
        .iter()
        .filter_map(|b| {
            let w = match weighting {
                Weighting::Equal => 1.0,
                Weighting::Count => b.count as f64,
            };
            b.mean.map(|m| (shape.value(b.mid()), m, w))
        })
        .collect();
    if used.is_empty() {
        return Err(AnalysisError::NoData);
    }
    let sgg: f64 = used.iter().map(|(g, _, w)| w * g * g).sum();
    if sgg == 0.0 {
        return Err(AnalysisError::DegenerateFit);
    }
    let sgm: f64 = used.iter().map(|(g, m, w)| w * g * m).sum();
    let a = sgm / sgg;
    let observed: Vec<f64> = used.iter().map(|u| u.1).collect();
    let predicted: Vec<f64> = used.iter().map(|u| a * u.0).collect();
    let (nrmse, r2) = match goodness(&observed, &predicted) {
        Ok((n, r)) => (Some(n), Some(r)),
        Err(_) => (None, None),
    };
    Ok(FitResult { a, shape: *shape, nrmse, r2, bins_used: used.len() })
}

/// NRMSE (RMSE over the observed range) and the coefficient of
/// determination.
pub fn goodness(observed: &[f64], predicted: &[f64]) -> Result<(f64, f64), AnalysisError> {
    if observed.len() != predicted.len() {
        return Err(AnalysisError::LengthMismatch(observed.len(), predicted.len()));
    }
    if observed.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let n = observed.len() as f64;
    let max = observed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = observed.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > min) {
        return Err(AnalysisError::ConstantObserved);
    }
    let mean = observed.iter().sum::<f64>() / n;
    let ss_res: f64 = observed.iter().zip(predicted).map(|(o, p)| (o - p).powi(2)).sum();
    let ss_tot: f64 = observed.iter().map(|o| (o - mean).powi(2)).sum();
    let rmse = (ss_res / n).sqrt();
    Ok((rmse / (max - min), 1.0 - ss_res / ss_tot))
}

/// A labelled time interval `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub label: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Measured,
    Estimated,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Measured => "measured",
            Source::Estimated => "estimated",
        }
    }
}

/// One time-stamped operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub timestamp: f64,
    pub slip: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionStats {
    pub label: String,
    pub start: f64,
    pub end: f64,
    pub count: usize,
    pub mean_s: Option<f64>,
    pub sd_s: Option<f64>,
    pub mean_mu: Option<f64>,
    pub sd_mu: Option<f64>,
    pub source: Source,
}

impl SectionStats {
    pub fn is_defined(&self) -> bool {
        self.mean_mu.is_some()
    }
}

fn inside(t: f64, start: f64, end: f64) -> bool {
    t >= start && t < end
}

/// Mean and SD of slip and adhesion per section. Samples inside any of the
/// `excluded` intervals (transition zones) are left out.
pub fn section_stats(
    points: &[OperatingPoint],
    sections: &[Section],
    excluded: &[(f64, f64)],
    source: Source,
) -> Result<Vec<SectionStats>, AnalysisError> {
    for s in sections {
        if !(s.start < s.end) {
            return Err(AnalysisError::InvalidRange(format!("section `{}` is empty or reversed", s.label)));
        }
    }
    let mut order: Vec<&Section> = sections.iter().collect();
    order.sort_by(|a, b| a.start.total_cmp(&b.start));
    if let Some(w) = order.windows(2).find(|w| w[1].start < w[0].end) {
        return Err(AnalysisError::InvalidRange(format!("sections `{}` and `{}` overlap", w[0].label, w[1].label)));
    }
    Ok(sections
        .iter()
        .map(|sec| {
            let kept: Vec<&OperatingPoint> = points
                .iter()
                .filter(|p| inside(p.timestamp, sec.start, sec.end))
                .filter(|p| !excluded.iter().any(|&(a, b)| inside(p.timestamp, a, b)))
                .collect();
            let s: Vec<f64> = kept.iter().map(|p| p.slip).collect();
            let mu: Vec<f64> = kept.iter().map(|p| p.mu).collect();
            let (mean_s, sd_s) = mean_sd(&s);
            let (mean_mu, sd_mu) = mean_sd(&mu);
            SectionStats {
                label: sec.label.clone(),
                start: sec.start,
                end: sec.end,
                count: kept.len(),
                mean_s,
                sd_s,
                mean_mu,
                sd_mu,
                source,
            }
        })
        .collect())
}

/// Default detection window (steps).
pub const DEFAULT_DETECTION_WINDOW: usize = 200;
/// Default detection threshold (pooled SDs).
pub const DEFAULT_DETECTION_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeEvent {
    pub timestamp: f64,
    /// Index of the first sample of the right-hand window.
    pub index: usize,
    /// Mean shift in units of the pooled window SD.
    pub statistic: f64,
}

/// Two-window mean-shift statistic at every boundary `k` in
/// `window..=n-window`: `|mean(right) - mean(left)| / pooled SD`.
pub fn shift_statistic(values: &[f64], window: usize) -> Vec<(usize, f64)> {
    let n = values.len();
    if window < 2 || n < 2 * window {
        return Vec::new();
    }
    // prefix sums on centred data keep the variance difference well conditioned
    let centre = values.iter().sum::<f64>() / n as f64;
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, v) in values.iter().enumerate() {
        let d = v - centre;
        s1[i + 1] = s1[i] + d;
        s2[i + 1] = s2[i] + d * d;
    }
    let w = window as f64;
    let stats = |a: usize, b: usize| {
        let m = (s1[b] - s1[a]) / w;
        let var = ((s2[b] - s2[a]) - w * m * m).max(0.0) / (w - 1.0);
        (m, var)
    };
    (window..=n - window)
        .map(|k| {
            let (ml, vl) = stats(k - window, k);
            let (mr, vr) = stats(k, k + window);
            let diff = (mr - ml).abs();
            let pooled = (0.5 * (vl + vr)).sqrt();
            let z = if pooled > 0.0 {
                diff / pooled
            } else if diff > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            (k, z)
        })
        .collect()
}

/// Flags mean shifts in `values` larger than `threshold` pooled SDs between
/// adjacent windows of `window` samples. Exceedances closer than one window
/// are merged into one event at their peak, and events are at least one
/// window apart.
pub fn detect_ground_change(
    timestamps: &[f64],
    values: &[f64],
    window: usize,
    threshold: f64,
) -> Result<Vec<ChangeEvent>, AnalysisError> {
    if timestamps.len() != values.len() {
        return Err(AnalysisError::LengthMismatch(timestamps.len(), values.len()));
    }
    if window < 2 {
        return Err(AnalysisError::InvalidRange(format!("window must be >= 2, got {window}")));
    }
    let mut events: Vec<ChangeEvent> = Vec::new();
    let mut run: Option<(usize, usize, f64)> = None; // (last exceeding k, argmax k, max)
    let close = |run: (usize, usize, f64), events: &mut Vec<ChangeEvent>| {
        let (_, k, z) = run;
        if events.last().is_none_or(|e| k - e.index >= window) {
            events.push(ChangeEvent { timestamp: timestamps[k], index: k, statistic: z });
        }
    };
    for (k, z) in shift_statistic(values, window) {
        if !(z > threshold) {
            continue;
        }
        run = match run {
            Some((last, peak, best)) if k - last <= window => {
                if z > best {
                    Some((k, k, z))
                } else {
                    Some((k, peak, best))
                }
            }
            Some(done) => {
                close(done, &mut events);
                Some((k, k, z))
            }
            None => Some((k, k, z)),
        };
    }
    if let Some(done) = run {
        close(done, &mut events);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_grid_has_55_bins() {
        let bins = bin_data(&[], &BinSpec::DEFAULT).unwrap();
        assert_eq!(bins.len(), 55);
        assert!(bins.iter().all(|b| b.count == 0 && b.mean.is_none()));
        assert_relative_eq!(bins[0].lo, 0.05);
        assert_relative_eq!(bins[54].hi, 0.60);
        assert_eq!(bin_data(&[], &BinSpec::GRASS).unwrap().len(), 35);
    }

    #[test]
    fn single_bin_concentration() {
        let samples = vec![(0.055, 0.4); 7];
        let bins = bin_data(&samples, &BinSpec::DEFAULT).unwrap();
        assert_eq!(bins[0].count, 7);
        assert_relative_eq!(bins[0].mean.unwrap(), 0.4, epsilon = 1e-15);
        assert_eq!(bins[0].sd, Some(0.0));
        assert!(bins[1..].iter().all(|b| b.count == 0));
    }

    #[test]
    fn two_sample_sd() {
        let bins = bin_data(&[(0.2, 0.3), (0.205, 0.5)], &BinSpec::DEFAULT).unwrap();
        let b = bins.iter().find(|b| b.count == 2).unwrap();
        assert_relative_eq!(b.mean.unwrap(), 0.4, epsilon = 1e-15);
        assert_relative_eq!(b.sd.unwrap(), 0.02f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(b.sd.unwrap(), 0.141_421_356_237_309_5, epsilon = 1e-15);
    }

    #[test]
    fn out_of_range_samples_are_dropped() {
        let bins = bin_data(&[(0.01, 1.0), (0.6, 1.0), (0.7, 1.0), (0.3, f64::NAN)], &BinSpec::DEFAULT).unwrap();
        assert!(bins.iter().all(|b| b.count == 0));
        assert!(bin_data(&[], &BinSpec { width: 0.0, min: 0.0, max: 1.0 }).is_err());
        assert!(bin_data(&[], &BinSpec { width: 0.01, min: 0.5, max: 0.5 }).is_err());
    }

    #[test]
    fn edge_samples_land_in_the_right_bin() {
        let spec = BinSpec::DEFAULT;
        let samples: Vec<(f64, f64)> = (0..55).map(|i| (spec.edge(i), i as f64)).collect();
        let bins = bin_data(&samples, &spec).unwrap();
        for (i, b) in bins.iter().enumerate() {
            assert_eq!(b.count, 1, "bin {i}");
            assert_eq!(b.mean, Some(i as f64));
        }
    }

    fn noiseless_bins(a: f64, shape: &CurveShape) -> Vec<SlipBin> {
        let spec = BinSpec::DEFAULT;
        let samples: Vec<(f64, f64)> = (0..spec.count())
            .map(|i| {
                let s = spec.min + (i as f64 + 0.5) * spec.width;
                (s, a * shape.value(s))
            })
            .collect();
        bin_data(&samples, &spec).unwrap()
    }

    #[test]
    fn noiseless_fit_recovers_scale() {
        let shape = CurveShape::PROTOTYPE;
        let fit = fit_scale(&noiseless_bins(0.85, &shape), &shape, Weighting::Equal).unwrap();
        assert_relative_eq!(fit.a, 0.85, epsilon = 1e-12);
        assert_relative_eq!(fit.r2.unwrap(), 1.0, epsilon = 1e-12);
        assert!(fit.nrmse.unwrap() < 1e-12);
        assert_eq!(fit.bins_used, 55);
    }

    #[test]
    fn zero_means_fit_zero_scale() {
        let shape = CurveShape::PROTOTYPE;
        let fit = fit_scale(&noiseless_bins(0.0, &shape), &shape, Weighting::Equal).unwrap();
        assert_eq!(fit.a, 0.0);
        assert_eq!(fit.r2, None);
    }

    #[test]
    fn fit_errors() {
        let shape = CurveShape::PROTOTYPE;
        let empty = bin_data(&[], &BinSpec::DEFAULT).unwrap();
        assert_eq!(fit_scale(&empty, &shape, Weighting::Equal), Err(AnalysisError::NoData));
        let flat = CurveShape { p: 1.0, alpha1: 0.0, alpha2: -3.0 };
        let bins = noiseless_bins(1.0, &CurveShape::PROTOTYPE);
        assert_eq!(fit_scale(&bins, &flat, Weighting::Equal), Err(AnalysisError::DegenerateFit));
    }

    #[test]
    fn count_weighting_favours_full_bins() {
        let shape = CurveShape::PROTOTYPE;
        let mut samples = vec![(0.105, 0.5 * shape.value(0.105)); 50];
        samples.push((0.305, 1.5 * shape.value(0.305)));
        let bins = bin_data(&samples, &BinSpec::DEFAULT).unwrap();
        let equal = fit_scale(&bins, &shape, Weighting::Equal).unwrap().a;
        let count = fit_scale(&bins, &shape, Weighting::Count).unwrap().a;
        assert!((count - 0.5).abs() < (equal - 0.5).abs());
    }

    #[test]
    fn goodness_examples() {
        let x = [0.1, 0.4, 0.35, 0.9];
        assert_eq!(goodness(&x, &x).unwrap(), (0.0, 1.0));
        let mean = x.iter().sum::<f64>() / 4.0;
        let (_, r2) = goodness(&x, &[mean; 4]).unwrap();
        assert_relative_eq!(r2, 0.0, epsilon = 1e-15);
        let (nrmse, r2) = goodness(&[0.0, 1.0], &[0.1, 0.9]).unwrap();
        assert_relative_eq!(nrmse, 0.1, epsilon = 1e-15);
        assert_relative_eq!(r2, 0.96, epsilon = 1e-15);
        assert_eq!(goodness(&[1.0, 1.0], &[1.0, 1.0]), Err(AnalysisError::ConstantObserved));
        assert_eq!(goodness(&[1.0], &[1.0, 2.0]), Err(AnalysisError::LengthMismatch(1, 2)));
        assert_eq!(goodness(&[], &[]), Err(AnalysisError::Empty));
    }

    fn points(f: impl Fn(f64) -> (f64, f64), n: usize) -> Vec<OperatingPoint> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.1;
                let (slip, mu) = f(t);
                OperatingPoint { timestamp: t, slip, mu }
            })
            .collect()
    }

    #[test]
    fn one_section_matches_global_mean() {
        let pts = points(|t| (0.1 + 0.01 * t.sin(), 0.3 + 0.05 * t.cos()), 200);
        let sec = [Section { label: "all".into(), start: 0.0, end: 100.0 }];
        let stats = section_stats(&pts, &sec, &[], Source::Estimated).unwrap();
        let mean_mu = pts.iter().map(|p| p.mu).sum::<f64>() / 200.0;
        assert_eq!(stats[0].count, 200);
        assert_relative_eq!(stats[0].mean_mu.unwrap(), mean_mu, epsilon = 1e-14);
    }

    #[test]
    fn transition_samples_are_excluded() {
        let pts = points(|t| if t < 10.0 { (0.1, 0.5) } else { (0.3, 0.2) }, 200);
        let secs = [
            Section { label: "hard".into(), start: 0.0, end: 10.0 },
            Section { label: "grass".into(), start: 10.0, end: 20.0 },
            Section { label: "zone".into(), start: 20.0, end: 30.0 },
        ];
        let excluded = [(9.0, 11.0), (19.0, 31.0)];
        let stats = section_stats(&pts, &secs, &excluded, Source::Measured).unwrap();
        assert_eq!(stats[0].count, 90);
        assert_eq!(stats[1].count, 80);
        assert_eq!(stats[2].count, 0);
        assert!(!stats[2].is_defined());
        assert!(stats[1].mean_mu.unwrap() < stats[0].mean_mu.unwrap());
        let overlapping = [secs[0].clone(), Section { label: "x".into(), start: 5.0, end: 12.0 }];
        assert!(section_stats(&pts, &overlapping, &[], Source::Measured).is_err());
    }

    #[test]
    fn no_events_on_constant_or_infinite_threshold() {
        let t: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert!(detect_ground_change(&t, &[0.3; 1000], 50, 2.0).unwrap().is_empty());
        let step: Vec<f64> = (0..1000).map(|i| if i < 500 { 0.5 } else { 0.1 }).collect();
        assert!(detect_ground_change(&t, &step, 50, f64::INFINITY).unwrap().is_empty());
        assert!(detect_ground_change(&t, &step, 1, 2.0).is_err());
    }

    #[test]
    fn one_event_at_a_noisy_step() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.03).unwrap();
        let t: Vec<f64> = (0..2000).map(|i| i as f64 * 0.01).collect();
        let mu: Vec<f64> = (0..2000).map(|i| if i < 1200 { 0.5 } else { 0.1 } + noise.sample(&mut rng)).collect();
        let events = detect_ground_change(&t, &mu, 100, 3.0).unwrap();
        assert_eq!(events.len(), 1);
        assert!((events[0].index as i64 - 1200).abs() <= 10);
    }

    #[test]
    fn statistic_is_scale_free() {
        let v: Vec<f64> = (0..300).map(|i| ((i * 7919) % 101) as f64 / 100.0 + if i > 150 { 0.3 } else { 0.0 }).collect();
        let w: Vec<f64> = v.iter().map(|x| 5.0 * x - 2.0).collect();
        for ((k1, z1), (k2, z2)) in shift_statistic(&v, 30).into_iter().zip(shift_statistic(&w, 30)) {
            assert_eq!(k1, k2);
            assert_relative_eq!(z1, z2, epsilon = 1e-9, max_relative = 1e-9);
        }
    }
}
