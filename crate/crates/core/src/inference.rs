//! Standard errors, Wald intervals and the stratified bootstrap.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dataset::{FusedDataset, Group, Unit};
use crate::estimators::{eif_values, Bounds, EifContext, EstimateError, Propensity};
use crate::nuisance::FittedModel;
use crate::rng::substream;

/// Largest tolerated fraction of failed bootstrap replicates.
pub const MAX_BOOTSTRAP_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("alpha must lie in (0,1), got {0}")]
    InvalidAlpha(f64),
    #[error("standard error must be finite and non-negative, got {0}")]
    InvalidSe(f64),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("{0} is singular")]
    Singular(&'static str),
    #[error("plug-in variance negative; model misspecification suspected (var = {0})")]
    NegativeVariance(f64),
    #[error("bootstrap needs at least 2 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("{failed} of {total} bootstrap replicates failed: {}", census_text(.census))]
    BootstrapFailures {
        failed: usize,
        total: usize,
        census: BTreeMap<String, usize>,
    },
}

fn census_text(census: &BTreeMap<String, usize>) -> String {
    census
        .iter()
        .map(|(k, v)| format!("{v}× {k}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Standard normal CDF, via `erfc` so that both tails keep full relative accuracy.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile. The statrs inverse is polished by Newton steps
/// on the lower tail probability.
pub fn normal_quantile(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return Normal::standard().inverse_cdf(p);
    }
    // 1 − p is exact for p ≥ 1/2
    let tail = p.min(1.0 - p);
    let mut z = Normal::standard().inverse_cdf(tail);
    for _ in 0..3 {
        let step = (normal_cdf(z) - tail) / normal_density(z);
        z -= step;
        if step.abs() <= 1e-16 * z.abs() {
            break;
        }
    }
    if p < 0.5 {
        z
    } else {
        -z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wald {
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

/// Normal-theory `1 − alpha` interval and two-sided p-value for `H0: τ = 0`.
pub fn wald_inference(tau_hat: f64, se: f64, alpha: f64) -> Result<Wald, InferenceError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferenceError::InvalidAlpha(alpha));
    }
    if !(se >= 0.0 && se.is_finite()) {
        return Err(InferenceError::InvalidSe(se));
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    let p_value = if se > 0.0 {
        2.0 * normal_cdf(-(tau_hat / se).abs())
    } else if tau_hat != 0.0 {
        log::warn!("degenerate standard error 0 with estimate {tau_hat}; reporting p = 0");
        0.0
    } else {
        1.0
    };
    Ok(Wald {
        ci_low: tau_hat - z * se,
        ci_high: tau_hat + z * se,
        p_value: p_value.clamp(0.0, 1.0),
    })
}

/// Plug-in standard error `sqrt(Ê[φ̂²] / n)` of the doubly robust estimator.
pub fn plugin_variance_dr(data: &FusedDataset, ctx: &EifContext<'_>) -> Result<f64, InferenceError> {
    let phi = eif_values(data, ctx)?;
    Ok(se_from_eif(&phi))
}

/// `sqrt(mean(φ²) / n)`.
pub fn se_from_eif(phi: &[f64]) -> f64 {
    let n = phi.len() as f64;
    (phi.iter().map(|v| v * v).sum::<f64>() / n / n).sqrt()
}

/// Components of the IPW asymptotic variances, all on the `√n1` scale.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticComponents {
    pub v1: f64,
    pub b1: DVector<f64>,
    /// Per-observation Fisher information of the outcome model.
    pub i_kappa: DMatrix<f64>,
    pub rho: f64,
    pub var_ipw_true: f64,
    /// Present only when the RCT propensity is estimated.
    pub v2: Option<f64>,
    pub b2: Option<DVector<f64>>,
    pub i_gamma: Option<DMatrix<f64>>,
    pub var_ipw_est: Option<f64>,
}

/// `bᵀ A⁻¹ b` for symmetric positive definite `A`.
fn quadratic_inverse(a: DMatrix<f64>, b: &DVector<f64>, name: &'static str) -> Result<f64, InferenceError> {
    let chol = Cholesky::new(a).ok_or(InferenceError::Singular(name))?;
    let x = chol.solve(b);
    Ok(b.dot(&x))
}

/// Plug-in standard error of the IPW estimator with its variance components.
/// With a known propensity the returned se uses `var_ipw_true`, otherwise `var_ipw_est`.
/// Estimate of the RCT propensity model's information matrix used in the
/// estimated-propensity variance correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityInformation {
    /// Outer product of the score, `Σ (T−ê)² X̃X̃ᵀ / (n1−1)`. The correction is
    /// then the explained part of a regression of the IPW terms on the
    /// propensity score, so the corrected variance stays at or below `V1`.
    #[default]
    Empirical,
    /// Model-based `Σ ê(1−ê) X̃X̃ᵀ / n1`.
    Expected,
}

pub fn plugin_variance_ipw(
    data: &FusedDataset,
    outcome: &FittedModel,
    propensity: Propensity<'_>,
    trim: Option<f64>,
    information: PropensityInformation,
) -> Result<(f64, AsymptoticComponents), InferenceError> {
    let n1 = data.n1() as f64;
    let d = outcome.fit.dim();
    let mut bounds = Bounds::new(trim);

    let rct: Vec<(usize, &Unit)> = data.units().iter().enumerate().filter(|(_, u)| u.is_rct()).collect();
    let mut e = Vec::with_capacity(rct.len());
    for &(i, u) in &rct {
        let raw = propensity.raw(Some(i), u).map_err(InferenceError::from)?;
        e.push(bounds.propensity("RCT propensity", Some(i), raw)?);
    }
    bounds.finish();
    let units: Vec<&Unit> = rct.iter().map(|(_, u)| *u).collect();
    let h = outcome.predict_many(units.iter().copied()).map_err(EstimateError::from)?;
    let grad = outcome.gradient(units.iter().copied()).map_err(EstimateError::from)?;

    let terms: Vec<f64> = units
        .iter()
        .zip(&e)
        .zip(h.iter())
        .map(|((u, &e), &h)| (u.t() - e) * h / (e * (1.0 - e)))
        .collect();
    let mean = terms.iter().sum::<f64>() / n1;
    let v1 = terms.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n1 - 1.0);

    let mut b1 = DVector::zeros(d);
    for (k, (u, &e)) in units.iter().zip(&e).enumerate() {
        let w = (u.t() - e) / (e * (1.0 - e));
        b1 += grad.row(k).transpose() * w;
    }
    b1 /= n1;

    let rho = data.rho_hat();
    let quad = outcome.fit.dispersion
        * quadratic_inverse(outcome.fit.information_unscaled.clone(), &b1, "outcome-model Fisher information")?;
    let var_ipw_true = v1 + rho * quad;

    let mut comps = AsymptoticComponents {
        v1,
        b1,
        i_kappa: outcome.fit.fisher_information(),
        rho,
        var_ipw_true,
        v2: None,
        b2: None,
        i_gamma: None,
        var_ipw_est: None,
    };

    let var = match propensity {
        Propensity::Known(_) => var_ipw_true,
        Propensity::Estimated(model) => {
            let rows: Vec<Vec<f64>> = units.iter().map(|u| model.augmented_row(u)).collect();
            let dg = rows[0].len();
            let mut b2 = DVector::zeros(dg);
            let mut i_gamma = DMatrix::zeros(dg, dg);
            for (((u, row), &e), &h) in units.iter().zip(&rows).zip(&e).zip(h.iter()) {
                let x = DVector::from_column_slice(row);
                let w = if u.treated { h * (1.0 - e) / e } else { h * e / (1.0 - e) };
                b2 += &x * w;
                let weight = match information {
                    PropensityInformation::Empirical => (u.t() - e).powi(2),
                    PropensityInformation::Expected => e * (1.0 - e),
                };
                i_gamma += &x * x.transpose() * weight;
            }
            b2 /= n1;
            i_gamma /= match information {
                PropensityInformation::Empirical => n1 - 1.0,
                PropensityInformation::Expected => n1,
            };
            let v2 = quadratic_inverse(i_gamma.clone(), &b2, "RCT propensity Fisher information")?;
            let var_est = var_ipw_true - v2;
            comps.v2 = Some(v2);
            comps.b2 = Some(b2);
            comps.i_gamma = Some(i_gamma);
            comps.var_ipw_est = Some(var_est);
            var_est
        }
    };
    if var < 0.0 {
        return Err(InferenceError::NegativeVariance(var));
    }
    Ok(((var / n1).sqrt(), comps))
}

/// Outcome of a stratified bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub struct Bootstrap {
    pub se: f64,
    /// Successful replicate estimates, in replicate order.
    pub replicates: Vec<f64>,
    pub failures: usize,
    pub census: BTreeMap<String, usize>,
}

/// A resampled dataset plus, for entry `j`, the position in the original
/// dataset it was drawn from.
pub fn stratified_resample(data: &FusedDataset, rng: &mut impl Rng) -> (Vec<Unit>, Vec<usize>) {
    let mut source = Vec::with_capacity(data.len());
    for group in [Group::Rct, Group::Observational] {
        let pos = data.positions(group);
        for _ in 0..pos.len() {
            source.push(pos[rng.random_range(0..pos.len())]);
        }
    }
    let units = source.iter().map(|&i| data.units()[i].clone()).collect();
    (units, source)
}

/// Standard deviation of `estimate` over `b` stratified resamples. The
/// estimator receives the resampled dataset and the source positions.
/// Replicates are seeded from `(seed, index)` so the result does not depend
/// on scheduling.
pub fn bootstrap_se<F, E>(data: &FusedDataset, estimate: F, b: usize, seed: u64) -> Result<Bootstrap, InferenceError>
where
    F: Fn(&FusedDataset, &[usize]) -> Result<f64, E> + Sync,
    E: std::fmt::Display,
{
    if b < 2 {
        return Err(InferenceError::TooFewReplicates(b));
    }
    let outcomes: Vec<Result<f64, String>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &[r as u64]);
            let (units, source) = stratified_resample(data, &mut rng);
            let resampled = data.with_units(units).map_err(|e| e.to_string())?;
            let v = estimate(&resampled, &source).map_err(|e| e.to_string())?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("non-finite estimate {v}"))
            }
        })
        .collect();
    let mut replicates = Vec::with_capacity(b);
    let mut census = BTreeMap::new();
    for o in outcomes {
        match o {
            Ok(v) => replicates.push(v),
            Err(msg) => *census.entry(msg).or_insert(0) += 1,
        }
    }
    let failures = b - replicates.len();
    if failures as f64 > MAX_BOOTSTRAP_FAILURE_RATE * b as f64 || replicates.len() < 2 {
        return Err(InferenceError::BootstrapFailures {
            failed: failures,
            total: b,
            census,
        });
    }
    if failures > 0 {
        log::warn!("{failures} of {b} bootstrap replicates failed and were dropped");
    }
    Ok(Bootstrap {
        se: sample_sd(&replicates),
        replicates,
        failures,
        census,
    })
}

/// Sample standard deviation with an `m − 1` denominator.
pub fn sample_sd(v: &[f64]) -> f64 {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wald_at_zero() {
        let w = wald_inference(0.0, 0.7, 0.05).unwrap();
        assert_eq!(w.p_value, 1.0);
        assert!((w.ci_low + w.ci_high).abs() < 1e-15);
    }

    #[test]
    fn wald_at_critical_value() {
        let w = wald_inference(1.96, 1.0, 0.05).unwrap();
        assert!((w.p_value - 0.05).abs() < 1e-3);
        assert!(w.ci_low.abs() < 1e-3);
    }

    #[test]
    fn wald_rejects_bad_alpha_and_handles_zero_se() {
        assert!(matches!(wald_inference(1.0, 1.0, 1.5), Err(InferenceError::InvalidAlpha(_))));
        assert!(matches!(wald_inference(1.0, -1.0, 0.05), Err(InferenceError::InvalidSe(_))));
        let w = wald_inference(0.3, 0.0, 0.05).unwrap();
        assert_eq!((w.p_value, w.ci_low, w.ci_high), (0.0, 0.3, 0.3));
    }

    #[test]
    fn eif_se_arithmetic() {
        assert_eq!(se_from_eif(&[0.0, 0.0, 0.0]), 0.0);
        assert!((se_from_eif(&[1.0, -1.0]) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sample_sd_small() {
        assert!((sample_sd(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
