//! Unscented Kalman filter core.
//!
//! Scaled symmetric sigma points (`2n + 1` of them), the unscented transform
//! for prediction, and the measurement update with sigma points regenerated
//! from the prior. Transition and measurement functions are plain closures
//! so the same core serves the traction model and the linear test systems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative jitter added to the diagonal when a covariance fails Cholesky.
const JITTER_SCALE: f64 = 1e-9;
const JITTER_ATTEMPTS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UkfError {
    #[error("covariance is not positive semi-definite, even after jitter")]
    DegenerateCovariance,
    #[error("sigma point {index} propagated to a non-finite value")]
    NonFinitePropagation { index: usize },
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Mean and covariance of a Gaussian belief.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEstimate {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianEstimate {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        Self { mean, covariance }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Scaling of the unscented transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnscentedParams {
    /// Spread of the points around the mean, in (0, 1].
    pub alpha: f64,
    /// Prior knowledge of the distribution; 2 is optimal for Gaussians.
    pub beta: f64,
    /// Secondary scaling.
    pub kappa: f64,
}

impl Default for UnscentedParams {
    fn default() -> Self {
        Self { alpha: 1e-3, beta: 2.0, kappa: 0.0 }
    }
}

impl UnscentedParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !self.beta.is_finite() || !self.kappa.is_finite() {
            return Err("beta and kappa must be finite".into());
        }
        Ok(())
    }

    fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        self.alpha * self.alpha * (n + self.kappa) - n
    }
}

/// Full filter configuration: scaling plus nominal noise covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct UkfConfig {
    pub params: UnscentedParams,
    pub process_noise: DMatrix<f64>,
    pub measurement_noise: DMatrix<f64>,
}

/// Deterministic sample set encoding a Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPointSet {
    pub points: Vec<DVector<f64>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

impl SigmaPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Weighted mean of the points.
    pub fn mean(&self) -> DVector<f64> {
        weighted_mean(&self.points, &self.mean_weights)
    }

    /// Weighted covariance of the points around their weighted mean.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        weighted_cross_covariance(&self.points, &mean, &self.points, &mean, &self.cov_weights)
    }
}

/// Weighted mean computed relative to the central point. Equivalent to
/// `sum w_i x_i` since the weights sum to one, but it avoids cancellation
/// when the central weight is large and negative.
fn weighted_mean(points: &[DVector<f64>], weights: &[f64]) -> DVector<f64> {
    let center = &points[0];
    let mut acc = DVector::zeros(center.len());
    for (p, w) in points.iter().zip(weights).skip(1) {
        acc.axpy(*w, &(p - center), 1.0);
    }
    center + acc
}

fn weighted_cross_covariance(
    a: &[DVector<f64>],
    a_mean: &DVector<f64>,
    b: &[DVector<f64>],
    b_mean: &DVector<f64>,
    weights: &[f64],
) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(a_mean.len(), b_mean.len());
    for ((pa, pb), w) in a.iter().zip(b).zip(weights) {
        let da = pa - a_mean;
        let db = pb - b_mean;
        acc.ger(*w, &da, &db, 1.0);
    }
    acc
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Lower-triangular square root of a symmetric PSD matrix. Retries with
/// escalating diagonal jitter when the plain factorization fails.
pub fn psd_sqrt(p: &DMatrix<f64>) -> Result<DMatrix<f64>, UkfError> {
    let n = p.nrows();
    if p.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(UkfError::DegenerateCovariance);
    }
    let sym = symmetrize(p);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.l());
    }
    let base = JITTER_SCALE * (sym.trace() / n as f64).max(f64::MIN_POSITIVE);
    let mut jitter = base;
    for _ in 0..JITTER_ATTEMPTS {
        let mut trial = sym.clone();
        for i in 0..n {
            trial[(i, i)] += jitter;
        }
        if let Some(chol) = trial.cholesky() {
            return Ok(chol.l());
        }
        jitter *= 10.0;
    }
    Err(UkfError::DegenerateCovariance)
}

pub fn generate_sigma_points(est: &GaussianEstimate, params: &UnscentedParams) -> Result<SigmaPointSet, UkfError> {
    let n = est.dim();
    if est.covariance.nrows() != n || est.covariance.ncols() != n {
        return Err(UkfError::Dimension(format!(
            "mean has {n} entries, covariance is {}x{}",
            est.covariance.nrows(),
            est.covariance.ncols()
        )));
    }
    let lambda = params.lambda(n);
    let spread = n as f64 + lambda;
    let root = psd_sqrt(&est.covariance)? * spread.sqrt();

    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(est.mean.clone());
    for j in 0..n {
        points.push(&est.mean + root.column(j));
    }
    for j in 0..n {
        points.push(&est.mean - root.column(j));
    }

    let w0 = lambda / spread;
    let wi = 1.0 / (2.0 * spread);
    let mut mean_weights = vec![wi; 2 * n + 1];
    let mut cov_weights = vec![wi; 2 * n + 1];
    mean_weights[0] = w0;
    cov_weights[0] = w0 + (1.0 - params.alpha * params.alpha + params.beta);
    Ok(SigmaPointSet { points, mean_weights, cov_weights })
}

/// Propagates sigma points through `f(x, u)` and recombines them.
pub fn predict<F>(
    points: &SigmaPointSet,
    mut f: F,
    u: &DVector<f64>,
    process_noise: &DMatrix<f64>,
) -> Result<GaussianEstimate, UkfError>
where
    F: FnMut(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let propagated = points
        .points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let next = f(p, u);
            if next.iter().all(|v| v.is_finite()) {
                Ok(next)
            } else {
                Err(UkfError::NonFinitePropagation { index })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = propagated[0].len();
    if process_noise.nrows() != n || process_noise.ncols() != n {
        return Err(UkfError::Dimension(format!("process noise must be {n}x{n}")));
    }
    let mean = weighted_mean(&propagated, &points.mean_weights);
    let cov = weighted_cross_covariance(&propagated, &mean, &propagated, &mean, &points.cov_weights) + process_noise;
    Ok(GaussianEstimate { mean, covariance: symmetrize(&cov) })
}

/// Result of a measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutput {
    pub posterior: GaussianEstimate,
    /// Measurement minus predicted measurement.
    pub innovation: DVector<f64>,
    /// Predicted innovation covariance.
    pub innovation_covariance: DMatrix<f64>,
}

/// Measurement update. `points` must be generated from `prior`.
pub fn update<H>(
    prior: &GaussianEstimate,
    points: &SigmaPointSet,
    mut h: H,
    y: &DVector<f64>,
    measurement_noise: &DMatrix<f64>,
) -> Result<UpdateOutput, UkfError>
where
    H: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let m = y.len();
    if measurement_noise.nrows() != m || measurement_noise.ncols() != m {
        return Err(UkfError::Dimension(format!("measurement noise must be {m}x{m}")));
    }
    let predicted: Vec<DVector<f64>> = points.points.iter().map(&mut h).collect();
    if predicted.iter().any(|p| p.len() != m) {
        return Err(UkfError::Dimension(format!("measurement function must return {m} entries")));
    }
    let y_hat = weighted_mean(&predicted, &points.mean_weights);
    let s = symmetrize(
        &(weighted_cross_covariance(&predicted, &y_hat, &predicted, &y_hat, &points.cov_weights) + measurement_noise),
    );
    let c = weighted_cross_covariance(&points.points, &prior.mean, &predicted, &y_hat, &points.cov_weights);

    // K = C S^-1, solved as S K^T = C^T
    let gain_t = match s.clone().cholesky() {
        Some(chol) => chol.solve(&c.transpose()),
        None => s.clone().lu().solve(&c.transpose()).ok_or(UkfError::SingularInnovation)?,
    };
    if gain_t.iter().any(|v| !v.is_finite()) {
        return Err(UkfError::SingularInnovation);
    }
    let gain = gain_t.transpose();
    let innovation = y - &y_hat;
    let mean = &prior.mean + &gain * &innovation;
    let cov = &prior.covariance - &gain * &s * gain.transpose();
    Ok(UpdateOutput {
        posterior: GaussianEstimate { mean, covariance: symmetrize(&cov) },
        innovation,
        innovation_covariance: s,
    })
}

/// Stateful wrapper holding the current belief.
#[derive(Debug, Clone)]
pub struct UnscentedKalmanFilter {
    pub params: UnscentedParams,
    pub estimate: GaussianEstimate,
}

impl UnscentedKalmanFilter {
    pub fn new(params: UnscentedParams, estimate: GaussianEstimate) -> Self {
        Self { params, estimate }
    }

    pub fn predict<F>(&mut self, f: F, u: &DVector<f64>, process_noise: &DMatrix<f64>) -> Result<(), UkfError>
    where
        F: FnMut(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
    {
        let points = generate_sigma_points(&self.estimate, &self.params)?;
        self.estimate = predict(&points, f, u, process_noise)?;
        Ok(())
    }

    /// Updates with `y`; the state is left untouched on error.
    pub fn update<H>(
        &mut self,
        h: H,
        y: &DVector<f64>,
        measurement_noise: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>), UkfError>
    where
        H: FnMut(&DVector<f64>) -> DVector<f64>,
    {
        let points = generate_sigma_points(&self.estimate, &self.params)?;
        let out = update(&self.estimate, &points, h, y, measurement_noise)?;
        self.estimate = out.posterior;
        Ok((out.innovation, out.innovation_covariance))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(mean: f64, var: f64) -> GaussianEstimate {
        GaussianEstimate::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    #[test]
    fn scalar_sigma_points_by_hand() {
        // lambda = 1 * (1 + 2) - 1 = 2, spread sqrt(3)
        let params = UnscentedParams { alpha: 1.0, beta: 0.0, kappa: 2.0 };
        let set = generate_sigma_points(&scalar(0.0, 1.0), &params).unwrap();
        let xs: Vec<f64> = set.points.iter().map(|p| p[0]).collect();
        assert_relative_eq!(xs[0], 0.0);
        assert_relative_eq!(xs[1], 3f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(xs[2], -(3f64.sqrt()), epsilon = 1e-15);
        assert_relative_eq!(set.mean_weights[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(set.mean_weights.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_covariance_collapses_points() {
        let est = GaussianEstimate::new(DVector::from_vec(vec![1.0, -2.0, 3.0]), DMatrix::zeros(3, 3));
        let set = generate_sigma_points(&est, &UnscentedParams::default()).unwrap();
        assert_eq!(set.len(), 7);
        assert!(set.points.iter().all(|p| *p == est.mean));
    }

    #[test]
    fn weights_reconstruct_mean_and_covariance() {
        let mean = DVector::from_vec(vec![0.3, -1.0, 4.0]);
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let est = GaussianEstimate::new(mean.clone(), cov.clone());
        for params in [UnscentedParams::default(), UnscentedParams { alpha: 1.0, beta: 2.0, kappa: 0.0 }] {
            let set = generate_sigma_points(&est, &params).unwrap();
            assert_relative_eq!(set.mean_weights.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            assert!((set.mean() - &mean).amax() < 1e-10);
            // covariance weights carry the extra (1 - alpha^2 + beta) on the centre,
            // which multiplies a zero deviation
            assert!((set.covariance() - &cov).amax() < 1e-9);
        }
    }

    #[test]
    fn identity_prediction_is_exact() {
        let est = GaussianEstimate::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]));
        let set = generate_sigma_points(&est, &UnscentedParams::default()).unwrap();
        let zero = DMatrix::zeros(2, 2);
        let out = predict(&set, |x, _| x.clone(), &DVector::zeros(0), &zero).unwrap();
        let err = (out.mean.clone() - &est.mean).amax();
        assert!(err < 1e-9, "{err}");
        assert!((out.covariance.clone() - &est.covariance).amax() < 1e-9);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.3]));
        let grown = predict(&set, |x, _| x.clone(), &DVector::zeros(0), &q).unwrap();
        assert!((grown.covariance - &out.covariance - q).amax() < 1e-12);
    }

    #[test]
    fn linear_prediction_matches_matrix_algebra() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.3, 0.9]);
        let est = GaussianEstimate::new(DVector::from_vec(vec![1.0, -1.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]));
        let set = generate_sigma_points(&est, &UnscentedParams::default()).unwrap();
        let out = predict(&set, |x, _| &a * x, &DVector::zeros(0), &DMatrix::zeros(2, 2)).unwrap();
        assert!((out.mean - &a * &est.mean).amax() < 1e-10);
        assert!((out.covariance - &a * &est.covariance * a.transpose()).amax() < 1e-9);
    }

    #[test]
    fn non_finite_point_is_reported() {
        let set = generate_sigma_points(&scalar(0.0, 1.0), &UnscentedParams::default()).unwrap();
        let err = predict(&set, |x, _| if x[0] > 0.0 { DVector::from_element(1, f64::NAN) } else { x.clone() }, &DVector::zeros(0), &DMatrix::zeros(1, 1))
            .unwrap_err();
        assert_eq!(err, UkfError::NonFinitePropagation { index: 1 });
    }

    #[test]
    fn scalar_update_matches_closed_form() {
        let prior = scalar(0.0, 1.0);
        let set = generate_sigma_points(&prior, &UnscentedParams::default()).unwrap();
        let r = DMatrix::from_element(1, 1, 1.0);
        let out = update(&prior, &set, |x| x.clone(), &DVector::from_element(1, 1.0), &r).unwrap();
        assert_relative_eq!(out.posterior.mean[0], 0.5, epsilon = 1e-10);
        assert_relative_eq!(out.posterior.covariance[(0, 0)], 0.5, epsilon = 1e-9);
        assert_relative_eq!(out.innovation[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(out.innovation_covariance[(0, 0)], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let prior = GaussianEstimate::new(DVector::from_vec(vec![0.4, 2.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]));
        let set = generate_sigma_points(&prior, &UnscentedParams::default()).unwrap();
        let y = DVector::from_element(1, 2.0);
        let out = update(&prior, &set, |x| DVector::from_element(1, x[1]), &y, &DMatrix::from_element(1, 1, 0.1)).unwrap();
        let err = (out.posterior.mean - &prior.mean).amax();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn uninformative_measurement_keeps_prior() {
        let prior = GaussianEstimate::new(DVector::from_vec(vec![0.4, 2.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]));
        let set = generate_sigma_points(&prior, &UnscentedParams::default()).unwrap();
        let r = DMatrix::identity(2, 2) * 1e12;
        let out = update(&prior, &set, |x| x.clone(), &DVector::from_vec(vec![5.0, -3.0]), &r).unwrap();
        for (a, b) in out.posterior.mean.iter().zip(prior.mean.iter()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        for (a, b) in out.posterior.covariance.iter().zip(prior.covariance.iter()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn singular_innovation_is_an_error() {
        let prior = GaussianEstimate::new(DVector::from_vec(vec![0.0]), DMatrix::zeros(1, 1));
        let set = generate_sigma_points(&prior, &UnscentedParams::default()).unwrap();
        let err = update(&prior, &set, |x| x.clone(), &DVector::from_element(1, 1.0), &DMatrix::zeros(1, 1)).unwrap_err();
        assert_eq!(err, UkfError::SingularInnovation);
    }

    #[test]
    fn jitter_rescues_a_borderline_covariance() {
        // rank-deficient by rounding: v v^T
        let v = DVector::from_vec(vec![1.0, 1.0 + 1e-13, 1.0]);
        let p = &v * v.transpose();
        let l = psd_sqrt(&p).unwrap();
        assert!((&l * l.transpose() - &p).amax() < 1e-6);
        let not_psd = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(psd_sqrt(&not_psd).unwrap_err(), UkfError::DegenerateCovariance);
    }
}
