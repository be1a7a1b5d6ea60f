//! Point estimators of `τ = E{Y(1) − Y(0) | G = 1}` and the efficient
//! influence function.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FusedDataset, OverlapReport, Unit};
use crate::design::Inputs;
use crate::glm::GlmError;
use crate::inference::{self, InferenceError};
use crate::nuisance::{FittedModel, KnownPropensity, NuisanceError, NuisanceSet, PropensityModel, Subset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// IPW with the supplied (true) RCT propensity.
    IpwTrue,
    /// IPW with a logistic RCT propensity fitted on `X`.
    IpwEst,
    Dr,
    /// Pooled surrogate-index baseline.
    SurrogateIndex,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::IpwTrue,
        EstimatorKind::IpwEst,
        EstimatorKind::Dr,
        EstimatorKind::SurrogateIndex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::IpwTrue => "ipw_true",
            EstimatorKind::IpwEst => "ipw_est",
            EstimatorKind::Dr => "dr",
            EstimatorKind::SurrogateIndex => "surrogate_index",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ipw_true" => Ok(EstimatorKind::IpwTrue),
            "ipw" | "ipw_est" => Ok(EstimatorKind::IpwEst),
            "dr" => Ok(EstimatorKind::Dr),
            "surrogate_index" | "si" => Ok(EstimatorKind::SurrogateIndex),
            other => Err(format!("unknown estimator '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Plugin,
    Bootstrap,
    None,
}

impl FromStr for VarianceMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "plugin" | "plug-in" => Ok(VarianceMethod::Plugin),
            "bootstrap" => Ok(VarianceMethod::Bootstrap),
            "none" => Ok(VarianceMethod::None),
            other => Err(format!("unknown variance method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauEstimate {
    pub estimator: EstimatorKind,
    pub tau_hat: f64,
    pub se: Option<f64>,
    /// `(low, high)`.
    pub ci: Option<(f64, f64)>,
    pub p_value: Option<f64>,
    pub variance_method: VarianceMethod,
    pub n1: usize,
    pub n0: usize,
    pub diagnostics: Option<OverlapReport>,
}

impl TauEstimate {
    pub fn point(estimator: EstimatorKind, tau_hat: f64, data: &FusedDataset) -> Self {
        Self {
            estimator,
            tau_hat,
            se: None,
            ci: None,
            p_value: None,
            variance_method: VarianceMethod::None,
            n1: data.n1(),
            n0: data.n0(),
            diagnostics: None,
        }
    }

    /// Attaches `se` with a normal-theory interval and two-sided p-value.
    pub fn with_se(mut self, se: f64, alpha: f64, method: VarianceMethod) -> Result<Self, InferenceError> {
        let w = inference::wald_inference(self.tau_hat, se, alpha)?;
        self.se = Some(se);
        self.ci = Some((w.ci_low, w.ci_high));
        self.p_value = Some(w.p_value);
        self.variance_method = method;
        Ok(self)
    }

    pub fn ci_low(&self) -> Option<f64> {
        self.ci.map(|c| c.0)
    }

    pub fn ci_high(&self) -> Option<f64> {
        self.ci.map(|c| c.1)
    }
}

fn describe_unit(unit: &Option<usize>) -> String {
    match unit {
        Some(i) => format!("unit {i}"),
        None => "the evaluated unit".to_owned(),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error("prediction failed: {0}")]
    Prediction(#[from] GlmError),
    #[error("{what} at the boundary {{0,1}} for {}: {value}", describe_unit(.unit))]
    Boundary {
        what: &'static str,
        unit: Option<usize>,
        value: f64,
    },
    #[error("selection propensity g_{arm}(S,X) = 1 for observational {}", describe_unit(.unit))]
    SelectionAtOne { arm: u8, unit: Option<usize> },
    #[error("no propensity available for {}", describe_unit(.unit))]
    MissingPropensity { unit: Option<usize> },
    #[error("{0}")]
    WrongModel(String),
}

/// Propensity source for the RCT arms.
#[derive(Debug, Clone, Copy)]
pub enum Propensity<'a> {
    Known(&'a KnownPropensity),
    Estimated(&'a FittedModel),
}

impl<'a> From<&'a PropensityModel> for Propensity<'a> {
    fn from(m: &'a PropensityModel) -> Self {
        match m {
            PropensityModel::Known(k) => Propensity::Known(k),
            PropensityModel::Estimated(f) => Propensity::Estimated(f),
        }
    }
}

impl Propensity<'_> {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            Propensity::Known(_) => EstimatorKind::IpwTrue,
            Propensity::Estimated(_) => EstimatorKind::IpwEst,
        }
    }

    /// Raw propensity for `unit`, found at dataset position `index` if known.
    pub fn raw(&self, index: Option<usize>, unit: &Unit) -> Result<f64, EstimateError> {
        match self {
            Propensity::Estimated(m) => Ok(m.predict(unit)?),
            Propensity::Known(KnownPropensity::Constant(v)) => Ok(*v),
            Propensity::Known(k) => index
                .and_then(|i| k.at(i))
                .ok_or(EstimateError::MissingPropensity { unit: index }),
        }
    }

    fn check(&self) -> Result<(), EstimateError> {
        if let Propensity::Estimated(m) = self {
            m.expect_subset("RCT propensity e(X)", Subset::Rct)?;
        }
        Ok(())
    }
}

/// Boundary handling for fitted probabilities, with optional clipping.
#[derive(Debug)]
pub(crate) struct Bounds {
    trim: Option<f64>,
    clipped: usize,
}

impl Bounds {
    pub(crate) fn new(trim: Option<f64>) -> Self {
        Self { trim, clipped: 0 }
    }

    fn clip(&mut self, v: f64) -> Option<f64> {
        let eps = self.trim?;
        let c = v.clamp(eps, 1.0 - eps);
        if c != v {
            self.clipped += 1;
        }
        Some(c)
    }

    pub(crate) fn propensity(&mut self, what: &'static str, unit: Option<usize>, v: f64) -> Result<f64, EstimateError> {
        if let Some(c) = self.clip(v) {
            return Ok(c);
        }
        if v > 0.0 && v < 1.0 {
            Ok(v)
        } else {
            Err(EstimateError::Boundary { what, unit, value: v })
        }
    }

    fn selection(&mut self, arm: u8, unit: Option<usize>, v: f64) -> Result<f64, EstimateError> {
        if let Some(c) = self.clip(v) {
            return Ok(c);
        }
        if v < 1.0 {
            Ok(v)
        } else {
            Err(EstimateError::SelectionAtOne { arm, unit })
        }
    }

    pub(crate) fn finish(&self) {
        if let (Some(eps), n @ 1..) = (self.trim, self.clipped) {
            log::warn!("clipped {n} fitted probabilities into [{eps}, {}]", 1.0 - eps);
        }
    }
}

fn check_outcome_model(model: &FittedModel, inputs: Inputs, name: &'static str) -> Result<(), EstimateError> {
    model.expect_subset(name, Subset::Observational)?;
    if model.design.inputs != inputs {
        return Err(EstimateError::WrongModel(format!(
            "{name} must be fitted on {inputs:?} regressors, found {:?}",
            model.design.inputs
        )));
    }
    Ok(())
}

/// `(1/n1) Σ_{G=1} [T m/e − (1−T) m/(1−e)]` for an outcome regression `m`
/// evaluated at each RCT unit's own regressors.
pub(crate) fn weighted_rct_mean(
    data: &FusedDataset,
    outcome: &FittedModel,
    propensity: Propensity<'_>,
    trim: Option<f64>,
) -> Result<f64, EstimateError> {
    let mut bounds = Bounds::new(trim);
    let mut total = 0.0;
    for (i, u) in data.units().iter().enumerate().filter(|(_, u)| u.is_rct()) {
        let e = bounds.propensity("RCT propensity", Some(i), propensity.raw(Some(i), u)?)?;
        let m = outcome.predict(u)?;
        total += if u.treated { m / e } else { -m / (1.0 - e) };
    }
    bounds.finish();
    Ok(total / data.n1() as f64)
}

/// IPW estimator with a transported outcome regression `ĥ(X,S,T)`.
pub fn estimate_ipw(
    data: &FusedDataset,
    h: &FittedModel,
    propensity: Propensity<'_>,
    trim: Option<f64>,
) -> Result<TauEstimate, EstimateError> {
    check_outcome_model(h, Inputs::XST, "outcome model h(X,S,T)")?;
    propensity.check()?;
    let tau = weighted_rct_mean(data, h, propensity, trim)?;
    Ok(TauEstimate::point(propensity.kind(), tau, data))
}

/// Surrogate-index baseline: IPW over the RCT with the pooled index `ŷ(S,X)`.
pub fn estimate_surrogate_index(
    data: &FusedDataset,
    index: &FittedModel,
    propensity: Propensity<'_>,
    trim: Option<f64>,
) -> Result<TauEstimate, EstimateError> {
    check_outcome_model(index, Inputs::XS, "surrogate index")?;
    propensity.check()?;
    let tau = weighted_rct_mean(data, index, propensity, trim)?;
    Ok(TauEstimate::point(EstimatorKind::SurrogateIndex, tau, data))
}

/// Everything needed to evaluate the efficient influence function.
#[derive(Debug, Clone, Copy)]
pub struct EifContext<'a> {
    pub nuisances: &'a NuisanceSet,
    pub tau: f64,
    pub q: f64,
    pub trim: Option<f64>,
}

impl<'a> EifContext<'a> {
    pub fn new(nuisances: &'a NuisanceSet, tau: f64) -> Self {
        Self {
            nuisances,
            tau,
            q: nuisances.q_hat,
            trim: None,
        }
    }
}

/// One unit's term of the doubly robust average, already divided by `q`.
fn dr_summand(
    u: &Unit,
    index: Option<usize>,
    ns: &NuisanceSet,
    q: f64,
    bounds: &mut Bounds,
) -> Result<f64, EstimateError> {
    let arm = u.treated as usize;
    let e_raw = Propensity::from(&ns.e_x).raw(index, u)?;
    let e = bounds.propensity("RCT propensity e(X)", index, e_raw)?;
    let mu_sx = ns.mu_sx[arm].predict(u)?;
    let value = if u.is_rct() {
        let mu1 = ns.mu_x[1].predict(u)?;
        let mu0 = ns.mu_x[0].predict(u)?;
        let correction = if u.treated {
            (mu_sx - mu1) / e
        } else {
            -(mu_sx - mu0) / (1.0 - e)
        };
        correction + mu1 - mu0
    } else {
        let y = u.y.expect("observational units carry an outcome");
        let g = bounds.selection(arm as u8, index, ns.g_sx[arm].predict(u)?)?;
        let ratio = g / (1.0 - g);
        if u.treated {
            ratio * (y - mu_sx) / e
        } else {
            -ratio * (y - mu_sx) / (1.0 - e)
        }
    };
    Ok(value / q)
}

/// Doubly robust estimator: the average over all `n` units of the
/// group-weighted summands.
pub fn estimate_dr(data: &FusedDataset, nuisances: &NuisanceSet, trim: Option<f64>) -> Result<TauEstimate, EstimateError> {
    nuisances.check_provenance()?;
    let q = nuisances.q_hat;
    let mut bounds = Bounds::new(trim);
    let mut total = 0.0;
    for (i, u) in data.units().iter().enumerate() {
        total += dr_summand(u, Some(i), nuisances, q, &mut bounds)?;
    }
    bounds.finish();
    Ok(TauEstimate::point(EstimatorKind::Dr, total / data.len() as f64, data))
}

/// Efficient influence function at one unit.
pub fn eif_value(unit: &Unit, ctx: &EifContext<'_>) -> Result<f64, EstimateError> {
    let mut bounds = Bounds::new(ctx.trim);
    eif_at(unit, None, ctx, &mut bounds)
}

fn eif_at(unit: &Unit, index: Option<usize>, ctx: &EifContext<'_>, bounds: &mut Bounds) -> Result<f64, EstimateError> {
    Ok(dr_summand(unit, index, ctx.nuisances, ctx.q, bounds)? - unit.g() * ctx.tau / ctx.q)
}

/// Influence function values for every unit, in dataset order.
pub fn eif_values(data: &FusedDataset, ctx: &EifContext<'_>) -> Result<Vec<f64>, EstimateError> {
    let mut bounds = Bounds::new(ctx.trim);
    let out = data
        .units()
        .iter()
        .enumerate()
        .map(|(i, u)| eif_at(u, Some(i), ctx, &mut bounds))
        .collect();
    bounds.finish();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Group;
    use crate::nuisance::{fit_h, fit_rct_propensity, NuisanceOptions};

    fn unit(group: Group, treated: bool, x: f64, s: f64, y: Option<f64>) -> Unit {
        Unit {
            group,
            treated,
            x: vec![x],
            s: vec![s],
            y,
        }
    }

    fn fixture() -> FusedDataset {
        let mut units = Vec::new();
        for i in 0..16 {
            let x = (i as f64 * 0.91).sin();
            let s = (i as f64 * 0.37).cos() + x;
            let t = i % 3 != 0;
            units.push(unit(Group::Observational, t, x, s, Some(2.0 * s - x + t as u8 as f64 + 0.1 * (i as f64).sin())));
        }
        for i in 0..10 {
            let x = (i as f64 * 1.7).cos();
            units.push(unit(Group::Rct, i % 2 == 0, x, x * 0.5 + 0.3, None));
        }
        FusedDataset::new(units, None).unwrap()
    }

    #[test]
    fn estimator_names_parse() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert_eq!("ipw".parse::<EstimatorKind>().unwrap(), EstimatorKind::IpwEst);
        assert_eq!("surrogate-index".parse::<EstimatorKind>().unwrap(), EstimatorKind::SurrogateIndex);
        assert!("aipw".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn zero_propensity_is_a_boundary_error() {
        let data = fixture();
        let h = fit_h(&data, &NuisanceOptions::default()).unwrap();
        let known = KnownPropensity::Constant(1.0);
        let err = estimate_ipw(&data, &h, Propensity::Known(&known), None).unwrap_err();
        assert!(matches!(err, EstimateError::Boundary { .. }), "{err}");
        // Clipping turns the error into a finite estimate.
        assert!(estimate_ipw(&data, &h, Propensity::Known(&known), Some(0.05))
            .unwrap()
            .tau_hat
            .is_finite());
    }

    #[test]
    fn ipw_rejects_a_model_fitted_on_the_rct() {
        let data = fixture();
        let e = fit_rct_propensity(&data, &NuisanceOptions::default()).unwrap();
        let known = KnownPropensity::Constant(0.5);
        assert!(estimate_ipw(&data, &e, Propensity::Known(&known), None).is_err());
    }

    #[test]
    fn tags_follow_propensity_source() {
        let data = fixture();
        let opts = NuisanceOptions::default();
        let h = fit_h(&data, &opts).unwrap();
        let e = fit_rct_propensity(&data, &opts).unwrap();
        let known = KnownPropensity::Constant(0.5);
        assert_eq!(
            estimate_ipw(&data, &h, Propensity::Known(&known), None).unwrap().estimator,
            EstimatorKind::IpwTrue
        );
        assert_eq!(
            estimate_ipw(&data, &h, Propensity::Estimated(&e), None).unwrap().estimator,
            EstimatorKind::IpwEst
        );
    }
}
