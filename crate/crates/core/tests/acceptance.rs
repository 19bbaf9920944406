//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use traction_core::dynamics::slip_ratio;
use traction_core::harness::bench::{run_bench, BenchReport, CriterionResult};
use traction_core::ukf::{generate_sigma_points, predict, GaussianEstimate, UnscentedKalmanFilter, UnscentedParams};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * normal(rng))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let b = random_matrix(rng, n, n, 1.0 / (n as f64).sqrt());
    &b * b.transpose() + DMatrix::identity(n, n) * floor
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| normal(rng))
}

fn rel_err_m(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn rel_err_v(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Random transition matrix rescaled to spectral radius 0.95, so the
/// state stays O(1) over the whole run.
fn stable_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let f = random_matrix(rng, n, n, 1.0 / (n as f64).sqrt());
    let radius = f.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
    f * (0.95 / radius)
}

/// Textbook Kalman filter with the Joseph-form covariance update.
struct KalmanOracle {
    x: DVector<f64>,
    p: DMatrix<f64>,
}

impl KalmanOracle {
    fn predict(&mut self, f: &DMatrix<f64>, q: &DMatrix<f64>) {
        self.x = f * &self.x;
        self.p = f * &self.p * f.transpose() + q;
    }

    fn update(&mut self, h: &DMatrix<f64>, r: &DMatrix<f64>, y: &DVector<f64>) {
        let s = h * &self.p * h.transpose() + r;
        let k = &self.p * h.transpose() * s.try_inverse().expect("S is SPD");
        self.x = &self.x + &k * (y - h * &self.x);
        let i_kh = DMatrix::identity(self.x.len(), self.x.len()) - &k * h;
        self.p = &i_kh * &self.p * i_kh.transpose() + &k * r * k.transpose();
    }
}

fn ukf_matches_kalman() -> CriterionResult {
    let (n, m, steps) = (10, 5, 100);
    let mut worst_mean: f64 = 0.0;
    let mut worst_cov: f64 = 0.0;
    let mut failures = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let f = stable_matrix(&mut rng, n);
        let h = random_matrix(&mut rng, m, n, 1.0);
        let q = random_spd(&mut rng, n, 0.01);
        let r = random_spd(&mut rng, m, 0.1);
        let x0 = random_vector(&mut rng, n);
        let p0 = random_spd(&mut rng, n, 0.1);

        let mut oracle = KalmanOracle { x: x0.clone(), p: p0.clone() };
        let mut ukf = UnscentedKalmanFilter::new(UnscentedParams::default(), GaussianEstimate::new(x0.clone(), p0));
        let mut truth = x0 + random_vector(&mut rng, n);
        let u = DVector::zeros(0);
        for _ in 0..steps {
            truth = &f * truth + random_vector(&mut rng, n) * 0.1;
            let y = &h * &truth + random_vector(&mut rng, m) * 0.3;
            oracle.predict(&f, &q);
            if ukf.predict(|x, _| &f * x, &u, &q).is_err() {
                failures += 1;
                break;
            }
            oracle.update(&h, &r, &y);
            if ukf.update(|x| &h * x, &y, &r).is_err() {
                failures += 1;
                break;
            }
            worst_mean = worst_mean.max(rel_err_v(&ukf.estimate.mean, &oracle.x));
            worst_cov = worst_cov.max(rel_err_m(&ukf.estimate.covariance, &oracle.p));
        }
    }
    CriterionResult {
        id: 3,
        title: "UKF/KF equivalence",
        passed: failures == 0 && worst_mean <= 1e-8 && worst_cov <= 1e-8,
        detail: format!("20 seeds x 100 steps: max rel err mean {worst_mean:.1e}, covariance {worst_cov:.1e} (need <= 1e-8)"),
    }
}

/// Worst relative error of the transformed mean and covariance over 50
/// random linear maps.
fn unscented_errors(params: &UnscentedParams) -> (f64, f64) {
    let mut worst_mean: f64 = 0.0;
    let mut worst_cov: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let n = rng.random_range(1..=10);
        let m = rng.random_range(1..=8);
        let a = random_matrix(&mut rng, m, n, 1.0);
        let mean = random_vector(&mut rng, n);
        let cov = random_spd(&mut rng, n, 0.05);
        let est = GaussianEstimate::new(mean.clone(), cov.clone());
        let points = generate_sigma_points(&est, params).expect("SPD covariance");
        let out = predict(&points, |x, _| &a * x, &DVector::zeros(0), &DMatrix::zeros(m, m)).expect("finite");
        worst_mean = worst_mean.max(rel_err_v(&out.mean, &(&a * &mean)));
        worst_cov = worst_cov.max(rel_err_m(&out.covariance, &(&a * &cov * a.transpose())));
    }
    (worst_mean, worst_cov)
}

fn unscented_transform_is_exact_for_linear_maps() -> CriterionResult {
    let default = UnscentedParams::default();
    let (mean, cov) = unscented_errors(&default);
    // context only: the same maps with a wider spread
    let (wide_mean, wide_cov) = unscented_errors(&UnscentedParams { alpha: 1e-2, ..default });
    CriterionResult {
        id: 4,
        title: "unscented transform",
        passed: mean <= 1e-10 && cov <= 1e-10,
        detail: format!(
            "50 seeds, alpha={}: max rel err mean {mean:.1e}, covariance {cov:.1e} (need <= 1e-10); \
             alpha=1e-2 gives {wide_mean:.1e}, {wide_cov:.1e}",
            default.alpha
        ),
    }
}

fn slip_properties() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(3000);
    let mut violations = Vec::new();
    let mut worst_jump: f64 = 0.0;
    for _ in 0..10_000 {
        let r = rng.random_range(0.05..1.0);
        let v: f64 = rng.random_range(-10.0..10.0);
        let omega: f64 = rng.random_range(-40.0..40.0);
        let s = slip_ratio(v, omega, r);
        if !(-1.0..=1.0).contains(&s) {
            violations.push(format!("s({v}, {omega}, {r}) = {s}"));
        }
        // branch boundary |v| = r|omega|, approached from both sides
        if omega != 0.0 {
            let edge = r * omega.abs();
            let eps = 1e-9;
            let below = slip_ratio(edge * (1.0 - eps), omega, r);
            let above = slip_ratio(edge * (1.0 + eps), omega, r);
            let at = slip_ratio(edge, omega, r);
            worst_jump = worst_jump.max((below - at).abs()).max((above - at).abs());
            if at != 0.0 {
                violations.push(format!("s at rolling = {at}"));
            }
            if slip_ratio(0.0, omega, r) != 1.0 {
                violations.push(format!("spinning wheel omega={omega} not 1"));
            }
        }
        if v != 0.0 && slip_ratio(v, 0.0, r) != -1.0 {
            violations.push(format!("locked wheel v={v} not -1"));
        }
    }
    let passed = violations.is_empty() && worst_jump < 1e-8;
    CriterionResult {
        id: 5,
        title: "slip formula",
        passed,
        detail: format!(
            "10^4 inputs: {} violations, max jump across branch boundary {worst_jump:.1e}{}",
            violations.len(),
            violations.first().map(|v| format!(", first: {v}")).unwrap_or_default()
        ),
    }
}

fn determinism(a: &BenchReport, b: &BenchReport) -> CriterionResult {
    let dirs = [tempfile::tempdir().expect("temp dir"), tempfile::tempdir().expect("temp dir")];
    a.write_to(dirs[0].path()).expect("write first run");
    b.write_to(dirs[1].path()).expect("write second run");
    let mut differing = Vec::new();
    let mut bytes = 0;
    for (name, _) in &a.files {
        let x = std::fs::read(dirs[0].path().join(name)).expect("file written");
        let y = std::fs::read(dirs[1].path().join(name)).ok();
        bytes += x.len();
        if y.as_deref() != Some(&x[..]) {
            differing.push(name.clone());
        }
    }
    let same_names = a.files.iter().map(|f| &f.0).eq(b.files.iter().map(|f| &f.0));
    CriterionResult {
        id: 9,
        title: "determinism",
        passed: same_names && differing.is_empty(),
        detail: format!("{} files, {bytes} bytes compared; differing: {:?}", a.files.len(), differing),
    }
}

fn main() {
    let start = std::time::Instant::now();
    let (first, second) = std::thread::scope(|s| {
        let a = s.spawn(run_bench);
        let b = s.spawn(run_bench);
        (a.join().expect("bench panicked"), b.join().expect("bench panicked"))
    });
    let (first, second) = (first.expect("bench run"), second.expect("bench run"));

    let mut results = first.results.clone();
    results.push(ukf_matches_kalman());
    results.push(unscented_transform_is_exact_for_linear_maps());
    results.push(slip_properties());
    results.push(determinism(&first, &second));
    results.sort_by_key(|r| r.id);

    println!();
    println!("acceptance criteria");
    for r in &results {
        println!("[{}] {} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.id, r.title, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} of {} criteria passed ({:.1} s)", results.len() - failed, results.len(), start.elapsed().as_secs_f64());
    println!();
    if failed > 0 {
        std::process::exit(1);
    }
}
