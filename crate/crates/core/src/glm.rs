//! Generalized linear models with identity (Gaussian) and logit (binomial) links.
//!
//! Linear models are solved in one Householder-QR least-squares step. Logistic
//! models use iteratively reweighted least squares started from the zero vector;
//! every inner weighted solve goes through a QR factorization of `W^{1/2} X`,
//! never through an explicit inverse.
//!
//! Regressor matrices passed in here never include the intercept column; it is
//! prepended internally when [`GlmSpec::add_intercept`] is set, and all
//! coefficient vectors, gradients and information matrices are expressed in the
//! augmented coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coefficient norm beyond which a logistic fit is declared separated.
pub const SEPARATION_NORM: f64 = 1e6;

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmSpec {
    pub family: Family,
    pub add_intercept: bool,
    pub max_iter: usize,
    /// Convergence threshold on the largest absolute coefficient update.
    pub tol: f64,
    /// Accept logistic fits whose fitted probabilities run to 0 or 1 on
    /// separated cells. Convergence is then judged on the relative change in
    /// deviance instead of the coefficients.
    pub allow_boundary: bool,
}

impl GlmSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            add_intercept: true,
            max_iter: 100,
            tol: 1e-8,
            allow_boundary: false,
        }
    }

    pub fn linear() -> Self {
        Self::new(Family::Linear)
    }

    pub fn logistic() -> Self {
        Self::new(Family::Logistic)
    }

    pub fn without_intercept(mut self) -> Self {
        self.add_intercept = false;
        self
    }

    pub fn allowing_boundary(mut self) -> Self {
        self.allow_boundary = true;
        self
    }

    fn validate(&self) -> Result<(), GlmError> {
        if !(self.tol > 0.0) {
            return Err(GlmError::InvalidSpec(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(GlmError::InvalidSpec("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GlmError {
    #[error("invalid GLM specification: {0}")]
    InvalidSpec(String),
    #[error("need more observations than parameters (n = {n}, d = {d})")]
    TooFewObservations { n: usize, d: usize },
    #[error("expected {expected} regressor columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("response has {got} entries but the regressor matrix has {expected} rows")]
    ResponseLength { expected: usize, got: usize },
    #[error("case weights have {got} entries for {expected} rows, or contain negative / non-finite values")]
    InvalidWeights { expected: usize, got: usize },
    #[error("logistic response must be 0 or 1 (row {row} is {value})")]
    NonBinaryResponse { row: usize, value: f64 },
    #[error("non-finite value in the regressors or response")]
    NonFinite,
    #[error("design matrix is rank deficient (numerical rank {rank} < {d} columns)")]
    RankDeficient { rank: usize, d: usize },
    #[error("separation suspected: coefficients diverged (max |coef| = {norm:.3e}) after {iterations} IRLS iterations")]
    Separation { iterations: usize, norm: f64 },
    #[error("IRLS did not converge within {iterations} iterations (last max change {max_change:.3e})")]
    NonConvergence { iterations: usize, max_change: f64 },
}

/// A fitted generalized linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub spec: GlmSpec,
    pub coefficients: DVector<f64>,
    /// `X̃ᵀ W X̃ / Σw` at the fit, where `W` holds the working weights
    /// (`ĥ(1−ĥ)` for logistic, the case weights for linear). Dividing by
    /// [`GlmFit::dispersion`] gives the per-observation Fisher information.
    pub information_unscaled: DMatrix<f64>,
    /// `RSS / (n − d)` for the linear family, `1` for logistic.
    pub dispersion: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_obs: usize,
    n_regressors: usize,
}

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let z = eta.exp();
        z / (1.0 + z)
    }
}

/// `ln(1 + e^η)` without overflow.
fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Prepends a column of ones when `add_intercept` is set.
pub fn augment(regressors: &DMatrix<f64>, add_intercept: bool) -> DMatrix<f64> {
    if add_intercept {
        regressors.clone().insert_column(0, 1.0)
    } else {
        regressors.clone()
    }
}

fn inverse_link(family: Family, eta: f64) -> f64 {
    match family {
        Family::Linear => eta,
        Family::Logistic => expit(eta),
    }
}

/// d mean / d eta.
fn link_derivative(family: Family, eta: f64) -> f64 {
    match family {
        Family::Linear => 1.0,
        Family::Logistic => {
            let m = expit(eta);
            m * (1.0 - m)
        }
    }
}

/// Least-squares solution of `a z ≈ b` through Householder QR.
/// `a` must have full column rank (checked by the caller).
fn qr_least_squares(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    let d = a.ncols();
    let qr = a.qr();
    let mut qtb = b;
    qr.q_tr_mul(&mut qtb);
    let r = qr.r();
    let head = qtb.rows(0, d).into_owned();
    r.solve_upper_triangular(&head)
}

/// Numerical rank of `design` after scaling every column to unit norm.
fn numerical_rank(design: &DMatrix<f64>) -> usize {
    let mut scaled = design.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let r = scaled.qr().r();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols())).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    diag.iter().filter(|&&v| v > RANK_TOL * max).count()
}

struct Prepared {
    design: DMatrix<f64>,
    weights: DVector<f64>,
}

fn prepare(
    spec: &GlmSpec,
    regressors: &DMatrix<f64>,
    response: &[f64],
    case_weights: Option<&[f64]>,
) -> Result<Prepared, GlmError> {
    spec.validate()?;
    let n = regressors.nrows();
    if response.len() != n {
        return Err(GlmError::ResponseLength {
            expected: n,
            got: response.len(),
        });
    }
    if regressors.iter().chain(response.iter()).any(|v| !v.is_finite()) {
        return Err(GlmError::NonFinite);
    }
    let weights = match case_weights {
        Some(w) => {
            if w.len() != n || w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(GlmError::InvalidWeights {
                    expected: n,
                    got: w.len(),
                });
            }
            DVector::from_column_slice(w)
        }
        None => DVector::from_element(n, 1.0),
    };
    let design = augment(regressors, spec.add_intercept);
    let d = design.ncols();
    if n <= d {
        return Err(GlmError::TooFewObservations { n, d });
    }
    if spec.family == Family::Logistic {
        if let Some((row, &value)) = response
            .iter()
            .enumerate()
            .find(|(_, &v)| v != 0.0 && v != 1.0)
        {
            return Err(GlmError::NonBinaryResponse { row, value });
        }
    }
    let rank = numerical_rank(&design);
    if rank < d {
        return Err(GlmError::RankDeficient { rank, d });
    }
    Ok(Prepared { design, weights })
}

fn weighted_rows(design: &DMatrix<f64>, root_w: &DVector<f64>) -> DMatrix<f64> {
    let mut a = design.clone();
    for (i, mut row) in a.row_iter_mut().enumerate() {
        row *= root_w[i];
    }
    a
}

fn cross_product(design: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let d = design.ncols();
    let mut out = DMatrix::zeros(d, d);
    for (i, row) in design.row_iter().enumerate() {
        if w[i] == 0.0 {
            continue;
        }
        for a in 0..d {
            let ra = row[a] * w[i];
            for b in a..d {
                out[(a, b)] += ra * row[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            out[(a, b)] = out[(b, a)];
        }
    }
    out
}

fn logistic_deviance(design: &DMatrix<f64>, response: &[f64], case_w: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    -2.0 * eta
        .iter()
        .zip(response)
        .zip(case_w.iter())
        .map(|((e, y), w)| w * (y * e - log1p_exp(*e)))
        .sum::<f64>()
}

/// One Newton / IRLS update for the logistic family: returns the step `δ` with
/// `(X̃ᵀ W X̃) δ = X̃ᵀ c (y − ĥ)` where `c` are case weights.
fn logistic_step(
    design: &DMatrix<f64>,
    response: &[f64],
    case_w: &DVector<f64>,
    beta: &DVector<f64>,
) -> Option<DVector<f64>> {
    let eta = design * beta;
    let n = design.nrows();
    let mut root_w = DVector::zeros(n);
    let mut rhs = DVector::zeros(n);
    for i in 0..n {
        let m = expit(eta[i]);
        let w = (case_w[i] * m * (1.0 - m)).max(1e-300);
        let rw = w.sqrt();
        root_w[i] = rw;
        rhs[i] = case_w[i] * (response[i] - m) / rw;
    }
    let step = qr_least_squares(weighted_rows(design, &root_w), rhs)?;
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Fits a GLM by maximum likelihood.
///
/// `case_weights` act as frequency weights: the per-observation information is
/// normalised by their sum and the linear dispersion uses `Σw − d` degrees of
/// freedom.
pub fn fit(
    spec: GlmSpec,
    regressors: &DMatrix<f64>,
    response: &[f64],
    case_weights: Option<&[f64]>,
) -> Result<GlmFit, GlmError> {
    let Prepared { design, weights } = prepare(&spec, regressors, response, case_weights)?;
    let n = design.nrows();
    let d = design.ncols();
    let total_w: f64 = weights.sum();
    let y = DVector::from_column_slice(response);

    match spec.family {
        Family::Linear => {
            let root_w = weights.map(f64::sqrt);
            let rhs = y.component_mul(&root_w);
            let beta = qr_least_squares(weighted_rows(&design, &root_w), rhs)
                .ok_or(GlmError::RankDeficient { rank: d - 1, d })?;
            let resid = &y - &design * &beta;
            let rss: f64 = resid
                .iter()
                .zip(weights.iter())
                .map(|(r, w)| w * r * r)
                .sum();
            let dof = (total_w - d as f64).max(f64::MIN_POSITIVE);
            Ok(GlmFit {
                spec,
                coefficients: beta,
                information_unscaled: cross_product(&design, &weights) / total_w,
                dispersion: rss / dof,
                converged: true,
                iterations: 1,
                n_obs: n,
                n_regressors: regressors.ncols(),
            })
        }
        Family::Logistic => {
            let mut beta = DVector::zeros(d);
            let mut max_change = f64::INFINITY;
            let mut iterations = 0;
            let mut deviance = logistic_deviance(&design, response, &weights, &beta);
            let mut converged = false;
            while iterations < spec.max_iter {
                iterations += 1;
                let step = logistic_step(&design, response, &weights, &beta).ok_or(
                    GlmError::Separation {
                        iterations,
                        norm: beta.amax(),
                    },
                )?;
                beta += &step;
                max_change = step.amax();
                if spec.allow_boundary {
                    if !beta.iter().all(|b| b.is_finite()) {
                        return Err(GlmError::NonFinite);
                    }
                    let next = logistic_deviance(&design, response, &weights, &beta);
                    let rel = (next - deviance).abs() / (next.abs() + 0.1);
                    deviance = next;
                    if rel < spec.tol || max_change < spec.tol {
                        converged = true;
                        break;
                    }
                    continue;
                }
                let norm = beta.amax();
                if !(norm <= SEPARATION_NORM) {
                    return Err(GlmError::Separation { iterations, norm });
                }
                if max_change < spec.tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                let eta = &design * &beta;
                let saturated = eta.iter().any(|e| e.abs() > 30.0);
                return Err(if saturated && !spec.allow_boundary {
                    GlmError::Separation {
                        iterations,
                        norm: beta.amax(),
                    }
                } else {
                    GlmError::NonConvergence {
                        iterations,
                        max_change,
                    }
                });
            }
            let eta = &design * &beta;
            let working = DVector::from_iterator(
                n,
                (0..n).map(|i| {
                    let m = expit(eta[i]);
                    weights[i] * m * (1.0 - m)
                }),
            );
            Ok(GlmFit {
                spec,
                coefficients: beta,
                information_unscaled: cross_product(&design, &working) / total_w,
                dispersion: 1.0,
                converged: true,
                iterations,
                n_obs: n,
                n_regressors: regressors.ncols(),
            })
        }
    }
}

impl GlmFit {
    /// Number of regressor columns expected by prediction (intercept excluded).
    pub fn n_regressors(&self) -> usize {
        self.n_regressors
    }

    /// Number of coefficients, intercept included.
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    /// Per-observation Fisher information `X̃ᵀ W X̃ / (n σ²)`.
    pub fn fisher_information(&self) -> DMatrix<f64> {
        &self.information_unscaled / self.dispersion
    }

    fn design(&self, regressors: &DMatrix<f64>) -> Result<DMatrix<f64>, GlmError> {
        if regressors.ncols() != self.n_regressors {
            return Err(GlmError::DimensionMismatch {
                expected: self.n_regressors,
                got: regressors.ncols(),
            });
        }
        Ok(augment(regressors, self.spec.add_intercept))
    }

    pub fn linear_predictor(&self, regressors: &DMatrix<f64>) -> Result<DVector<f64>, GlmError> {
        Ok(self.design(regressors)? * &self.coefficients)
    }

    pub fn predict_mean(&self, regressors: &DMatrix<f64>) -> Result<DVector<f64>, GlmError> {
        let family = self.spec.family;
        Ok(self
            .linear_predictor(regressors)?
            .map(|eta| inverse_link(family, eta)))
    }

    /// Prediction for a single regressor row.
    pub fn predict_row(&self, row: &[f64]) -> Result<f64, GlmError> {
        if row.len() != self.n_regressors {
            return Err(GlmError::DimensionMismatch {
                expected: self.n_regressors,
                got: row.len(),
            });
        }
        let offset = usize::from(self.spec.add_intercept);
        let mut eta = if self.spec.add_intercept {
            self.coefficients[0]
        } else {
            0.0
        };
        for (j, v) in row.iter().enumerate() {
            eta += self.coefficients[j + offset] * v;
        }
        Ok(inverse_link(self.spec.family, eta))
    }

    /// Row `i` holds `∂ mean_i / ∂ coefficients`.
    pub fn mean_gradient(&self, regressors: &DMatrix<f64>) -> Result<DMatrix<f64>, GlmError> {
        let mut design = self.design(regressors)?;
        let eta = &design * &self.coefficients;
        for (i, mut row) in design.row_iter_mut().enumerate() {
            row *= link_derivative(self.spec.family, eta[i]);
        }
        Ok(design)
    }

    /// Total score `X̃ᵀ (y − ĥ) / σ²` at the fitted coefficients.
    pub fn score(&self, regressors: &DMatrix<f64>, response: &[f64]) -> Result<DVector<f64>, GlmError> {
        let design = self.design(regressors)?;
        Ok(score(
            self.spec.family,
            &self.coefficients,
            &design,
            response,
            self.dispersion,
        ))
    }

    /// Coefficients after one further IRLS step on the same data.
    pub fn refine_once(&self, regressors: &DMatrix<f64>, response: &[f64]) -> Result<DVector<f64>, GlmError> {
        let design = self.design(regressors)?;
        match self.spec.family {
            Family::Linear => Ok(fit(self.spec, regressors, response, None)?.coefficients),
            Family::Logistic => {
                let w = DVector::from_element(design.nrows(), 1.0);
                let step = logistic_step(&design, response, &w, &self.coefficients).ok_or(
                    GlmError::Separation {
                        iterations: 1,
                        norm: self.coefficients.amax(),
                    },
                )?;
                Ok(&self.coefficients + step)
            }
        }
    }
}

/// Average log-likelihood over the rows of an already-augmented design.
/// `dispersion` is the Gaussian variance for the linear family and ignored
/// for logistic.
pub fn average_log_likelihood(
    family: Family,
    coefficients: &DVector<f64>,
    design: &DMatrix<f64>,
    response: &[f64],
    dispersion: f64,
) -> f64 {
    let eta = design * coefficients;
    let n = response.len() as f64;
    let total: f64 = match family {
        Family::Linear => eta
            .iter()
            .zip(response)
            .map(|(e, y)| {
                -0.5 * (2.0 * std::f64::consts::PI * dispersion).ln()
                    - (y - e) * (y - e) / (2.0 * dispersion)
            })
            .sum(),
        Family::Logistic => eta
            .iter()
            .zip(response)
            .map(|(e, y)| y * e - log1p_exp(*e))
            .sum(),
    };
    total / n
}

/// Total score (gradient of the summed log-likelihood) over an augmented design.
pub fn score(
    family: Family,
    coefficients: &DVector<f64>,
    design: &DMatrix<f64>,
    response: &[f64],
    dispersion: f64,
) -> DVector<f64> {
    let eta = design * coefficients;
    let resid = DVector::from_iterator(
        response.len(),
        eta.iter()
            .zip(response)
            .map(|(e, y)| y - inverse_link(family, *e)),
    );
    let scale = match family {
        Family::Linear => dispersion,
        Family::Logistic => 1.0,
    };
    design.tr_mul(&resid) / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn symmetric_logistic_data_gives_zero_coefficients() {
        let x = column(&[-1.0, 1.0, 1.0, -1.0]);
        let fit = fit(GlmSpec::logistic(), &x, &[0.0, 1.0, 0.0, 1.0], None).unwrap();
        assert!(fit.coefficients.amax() < 1e-12);
        assert!(fit.converged);
    }

    #[test]
    fn exact_linear_fit() {
        let x = column(&[0.0, 1.0, 2.0]);
        let fit = fit(GlmSpec::linear(), &x, &[2.0, 5.0, 8.0], None).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 3.0).abs() < 1e-12);
        assert!(fit.dispersion.abs() < 1e-20);
    }

    #[test]
    fn linear_prediction_is_arithmetic() {
        let x = column(&[0.0, 1.0, 2.0]);
        let fit = fit(GlmSpec::linear(), &x, &[2.0, 5.0, 8.0], None).unwrap();
        let p = fit.predict_mean(&column(&[5.0])).unwrap();
        assert!((p[0] - 17.0).abs() < 1e-10);
        assert!((fit.predict_row(&[5.0]).unwrap() - 17.0).abs() < 1e-10);
    }

    #[test]
    fn zero_logistic_coefficients_predict_half_and_quarter_gradient() {
        let x = column(&[-1.0, 1.0, 1.0, -1.0]);
        let fit = fit(GlmSpec::logistic(), &x, &[0.0, 1.0, 0.0, 1.0], None).unwrap();
        let newx = column(&[3.0, -2.0]);
        for p in fit.predict_mean(&newx).unwrap().iter() {
            assert!((p - 0.5).abs() < 1e-12);
        }
        let g = fit.mean_gradient(&newx).unwrap();
        assert!((g[(0, 0)] - 0.25).abs() < 1e-12);
        assert!((g[(0, 1)] - 0.75).abs() < 1e-12);
        assert!((g[(1, 1)] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_gradient_is_augmented_design() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 0.5, 2.0, -1.0, 3.0, 2.0]);
        let fit = fit(GlmSpec::linear(), &x, &[1.0, 2.0, 2.5, 7.0], None).unwrap();
        assert_eq!(fit.mean_gradient(&x).unwrap(), augment(&x, true));
    }

    #[test]
    fn too_few_observations() {
        let x = column(&[1.0, 2.0]);
        assert_eq!(
            fit(GlmSpec::linear(), &x, &[1.0, 2.0], None),
            Err(GlmError::TooFewObservations { n: 2, d: 2 })
        );
    }

    #[test]
    fn rank_deficiency_detected() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        assert!(matches!(
            fit(GlmSpec::linear(), &x, &[1.0, 2.0, 3.0, 5.0], None),
            Err(GlmError::RankDeficient { .. })
        ));
    }

    #[test]
    fn complete_separation_is_an_error() {
        let x = column(&[-2.0, -1.0, -0.5, 0.5, 1.0, 2.0]);
        let err = fit(GlmSpec::logistic(), &x, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0], None).unwrap_err();
        assert!(matches!(err, GlmError::Separation { .. }), "{err:?}");
    }

    #[test]
    fn non_binary_logistic_response_rejected() {
        let x = column(&[0.0, 1.0, 2.0, 3.0]);
        assert!(matches!(
            fit(GlmSpec::logistic(), &x, &[0.0, 1.0, 0.5, 1.0], None),
            Err(GlmError::NonBinaryResponse { row: 2, .. })
        ));
    }

    #[test]
    fn dimension_mismatch_on_predict() {
        let x = column(&[0.0, 1.0, 2.0]);
        let fit = fit(GlmSpec::linear(), &x, &[2.0, 5.0, 8.1], None).unwrap();
        assert!(matches!(
            fit.predict_mean(&DMatrix::zeros(2, 2)),
            Err(GlmError::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn invalid_spec_rejected() {
        let x = column(&[0.0, 1.0, 2.0]);
        let mut spec = GlmSpec::linear();
        spec.tol = 0.0;
        assert!(matches!(fit(spec, &x, &[1.0, 2.0, 3.0], None), Err(GlmError::InvalidSpec(_))));
    }

    #[test]
    fn frequency_weights_match_duplicated_rows() {
        let x = column(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = [0.0, 0.0, 1.0, 0.0, 1.0];
        let weighted = fit(GlmSpec::logistic(), &x, &y, Some(&[1.0, 2.0, 1.0, 1.0, 2.0])).unwrap();
        let dup_x = column(&[0.0, 1.0, 1.0, 2.0, 3.0, 4.0, 4.0]);
        let dup_y = [0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let dup = fit(GlmSpec::logistic(), &dup_x, &dup_y, None).unwrap();
        assert!((weighted.coefficients - dup.coefficients).amax() < 1e-9);
    }
}
