//! Fit-then-estimate pipeline shared by the CLI, the bootstrap and the
//! Monte Carlo harness.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FusedDataset;
use crate::estimators::{
    estimate_dr, estimate_ipw, estimate_surrogate_index, EifContext, EstimateError, EstimatorKind, Propensity,
    TauEstimate, VarianceMethod,
};
use crate::inference::{
    bootstrap_se, plugin_variance_dr, plugin_variance_ipw, Bootstrap, InferenceError, PropensityInformation,
};
use crate::nuisance::{
    assemble, fit_h, fit_rct_propensity, fit_surrogate_index, KnownPropensity, NuisanceError, NuisanceOptions,
    PropensityMode,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub nuisance: NuisanceOptions,
    /// Required by `ipw_true`; also used by the surrogate index when present.
    pub known_propensity: Option<KnownPropensity>,
    pub trim: Option<f64>,
    pub alpha: f64,
    pub propensity_information: PropensityInformation,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            nuisance: NuisanceOptions::default(),
            known_propensity: None,
            trim: None,
            alpha: 0.05,
            propensity_information: PropensityInformation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("{0} requires a known propensity (supply a propensity column or constant)")]
    MissingPropensity(EstimatorKind),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

impl AnalysisError {
    /// True for problems with what the caller asked for rather than with the fits.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            AnalysisError::MissingPropensity(_)
                | AnalysisError::Inference(InferenceError::InvalidAlpha(_))
                | AnalysisError::Inference(InferenceError::TooFewReplicates(_))
                | AnalysisError::Nuisance(
                    NuisanceError::KnownPropensityOutOfRange { .. }
                        | NuisanceError::KnownPropensityMissing { .. }
                        | NuisanceError::KnownPropensityLength { .. }
                )
        )
    }
}

fn known<'a>(kind: EstimatorKind, s: &'a Settings, data: &FusedDataset) -> Result<&'a KnownPropensity, AnalysisError> {
    let k = s
        .known_propensity
        .as_ref()
        .ok_or(AnalysisError::MissingPropensity(kind))?;
    k.validate(data)?;
    Ok(k)
}

/// Point estimate with the plug-in standard error.
pub fn plugin(kind: EstimatorKind, data: &FusedDataset, s: &Settings) -> Result<(f64, f64), AnalysisError> {
    run(kind, data, s, true).map(|(tau, se)| (tau, se.expect("plug-in se requested")))
}

/// Point estimate only.
pub fn point_estimate(kind: EstimatorKind, data: &FusedDataset, s: &Settings) -> Result<f64, AnalysisError> {
    run(kind, data, s, false).map(|(tau, _)| tau)
}

fn run(kind: EstimatorKind, data: &FusedDataset, s: &Settings, with_se: bool) -> Result<(f64, Option<f64>), AnalysisError> {
    let opts = &s.nuisance;
    match kind {
        EstimatorKind::IpwTrue | EstimatorKind::IpwEst => {
            let h = fit_h(data, opts)?;
            let e_fit;
            let propensity = if kind == EstimatorKind::IpwTrue {
                Propensity::Known(known(kind, s, data)?)
            } else {
                e_fit = fit_rct_propensity(data, opts)?;
                Propensity::Estimated(&e_fit)
            };
            let tau = estimate_ipw(data, &h, propensity, s.trim)?.tau_hat;
            let se = if with_se {
                Some(plugin_variance_ipw(data, &h, propensity, s.trim, s.propensity_information)?.0)
            } else {
                None
            };
            Ok((tau, se))
        }
        EstimatorKind::SurrogateIndex => {
            let index = fit_surrogate_index(data, opts)?;
            let e_fit;
            let propensity = match &s.known_propensity {
                Some(_) => Propensity::Known(known(kind, s, data)?),
                None => {
                    e_fit = fit_rct_propensity(data, opts)?;
                    Propensity::Estimated(&e_fit)
                }
            };
            let tau = estimate_surrogate_index(data, &index, propensity, s.trim)?.tau_hat;
            let se = if with_se {
                Some(plugin_variance_ipw(data, &index, propensity, s.trim, s.propensity_information)?.0)
            } else {
                None
            };
            Ok((tau, se))
        }
        EstimatorKind::Dr => {
            let ns = assemble(data, PropensityMode::Estimated, opts)?;
            let tau = estimate_dr(data, &ns, s.trim)?.tau_hat;
            let se = if with_se {
                let mut ctx = EifContext::new(&ns, tau);
                ctx.trim = s.trim;
                Some(plugin_variance_dr(data, &ctx)?)
            } else {
                None
            };
            Ok((tau, se))
        }
    }
}

/// Stratified bootstrap of the point estimate, refitting every nuisance model.
pub fn bootstrap(
    kind: EstimatorKind,
    data: &FusedDataset,
    s: &Settings,
    b: usize,
    seed: u64,
) -> Result<Bootstrap, AnalysisError> {
    Ok(bootstrap_se(
        data,
        |resampled, source| {
            let mut local = s.clone();
            local.known_propensity = s.known_propensity.as_ref().map(|k| k.reindex(source));
            point_estimate(kind, resampled, &local)
        },
        b,
        seed,
    )?)
}

/// Full analysis: point estimate plus the requested standard error, interval and p-value.
pub fn analyze(
    kind: EstimatorKind,
    data: &FusedDataset,
    s: &Settings,
    variance: VarianceMethod,
    bootstrap_b: usize,
    seed: u64,
) -> Result<TauEstimate, AnalysisError> {
    let (tau, se) = run(kind, data, s, variance == VarianceMethod::Plugin)?;
    let est = TauEstimate::point(kind, tau, data);
    Ok(match variance {
        VarianceMethod::None => est,
        VarianceMethod::Plugin => est.with_se(se.expect("plug-in se requested"), s.alpha, variance)?,
        VarianceMethod::Bootstrap => {
            let boot = bootstrap(kind, data, s, bootstrap_b, seed)?;
            est.with_se(boot.se, s.alpha, variance)?
        }
    })
}
