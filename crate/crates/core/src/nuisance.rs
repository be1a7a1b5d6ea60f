//! The nuisance-model pipeline: which model is fitted on which subset.
//!
//! | model            | family          | regressors | fitted on                 |
//! |------------------|-----------------|------------|---------------------------|
//! | `μ_t(S,X)`       | outcome family  | `(X,S)`    | observational, `T = t`    |
//! | `μ_t(X)`         | linear          | `X`        | RCT (all, or arm `t`)     |
//! | `e(X)`           | logistic        | `X`        | RCT                       |
//! | `g_t(S,X)`       | logistic on `G` | `(X,S)`    | both samples, `T = t`     |
//! | `h(X,S,T)`       | outcome family  | `(X,S,T)`  | observational             |
//! | surrogate index  | outcome family  | `(X,S)`    | observational, pooled `T` |

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FusedDataset, Group, Unit};
use crate::design::{stack, Design, Encoding, Inputs, Terms};
use crate::glm::{self, GlmError, GlmFit, GlmSpec};

/// Data subset a model was fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Observational,
    ObservationalArm(u8),
    Rct,
    RctArm(u8),
    /// Both samples, restricted to one treatment arm.
    PooledArm(u8),
    /// Both samples, both arms.
    Pooled,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subset::Observational => write!(f, "observational sample"),
            Subset::ObservationalArm(t) => write!(f, "observational sample, T = {t}"),
            Subset::Rct => write!(f, "RCT sample"),
            Subset::RctArm(t) => write!(f, "RCT sample, T = {t}"),
            Subset::PooledArm(t) => write!(f, "pooled samples, T = {t}"),
            Subset::Pooled => write!(f, "pooled samples"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NuisanceError {
    #[error("{model} fit on the {subset} failed: {source}")]
    Fit {
        model: &'static str,
        subset: Subset,
        #[source]
        source: GlmError,
    },
    #[error("{model}: the {subset} has no units with G = {missing}")]
    EmptyStratum {
        model: &'static str,
        subset: Subset,
        missing: u8,
    },
    #[error("known propensity outside (0,1) at unit {unit}: {value}")]
    KnownPropensityOutOfRange { unit: usize, value: f64 },
    #[error("no known propensity supplied for RCT unit {unit}")]
    KnownPropensityMissing { unit: usize },
    #[error("known propensities cover {got} units but the dataset has {expected}")]
    KnownPropensityLength { expected: usize, got: usize },
    #[error("{model} was fitted on the {found}, expected the {expected}")]
    Provenance {
        model: &'static str,
        expected: Subset,
        found: Subset,
    },
    #[error("{model} did not converge")]
    NotConverged { model: &'static str },
}

/// Parameterization of the selection models `g_0`, `g_1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionForm {
    /// One logistic fit of G on `(X,S,T)` over all units; the arms share the
    /// `(X,S)` slopes and differ by the `T` coefficient. Under the saturated
    /// encoding this is the same model as `PerArm`.
    #[default]
    Shared,
    /// A separate logistic fit of G on `(X,S)` within each arm.
    PerArm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceOptions {
    pub encoding: Encoding,
    /// Regress `μ̂_t(S,X)` on `X` over RCT arm `t` only instead of the whole RCT.
    pub mu_x_arm_only: bool,
    pub mu_x_terms: Terms,
    pub selection_terms: Terms,
    pub selection_form: SelectionForm,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for NuisanceOptions {
    fn default() -> Self {
        Self {
            encoding: Encoding::Additive,
            mu_x_arm_only: false,
            mu_x_terms: Terms::Full,
            selection_terms: Terms::Full,
            selection_form: SelectionForm::default(),
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

impl NuisanceOptions {
    fn spec(&self, family: glm::Family) -> GlmSpec {
        GlmSpec {
            family,
            add_intercept: true,
            max_iter: self.max_iter,
            tol: self.tol,
            allow_boundary: self.encoding == Encoding::Saturated,
        }
    }
}

/// A GLM together with the regressor layout and data subset it was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub fit: GlmFit,
    pub design: Design,
    pub subset: Subset,
    /// Design columns kept in the fit when some were aliased on the fitting
    /// data (saturated encodings with empty cells); `None` keeps them all.
    pub columns: Option<Vec<usize>>,
}

impl FittedModel {
    fn select(&self, row: Vec<f64>) -> Vec<f64> {
        match &self.columns {
            Some(cols) => cols.iter().map(|&j| row[j]).collect(),
            None => row,
        }
    }

    /// Fitted mean at the unit's own regressors.
    pub fn predict(&self, unit: &Unit) -> Result<f64, GlmError> {
        self.fit.predict_row(&self.select(self.design.row(unit)))
    }

    /// Fitted mean with the treatment regressor forced to `treated`.
    pub fn predict_with_treatment(&self, unit: &Unit, treated: f64) -> Result<f64, GlmError> {
        self.fit
            .predict_row(&self.select(self.design.row_with_treatment(unit, treated)))
    }

    pub fn regressors<'a, I>(&self, units: I) -> DMatrix<f64>
    where
        I: IntoIterator<Item = &'a Unit>,
    {
        stack(units.into_iter().map(|u| self.select(self.design.row(u))).collect())
    }

    pub fn predict_many<'a, I>(&self, units: I) -> Result<DVector<f64>, GlmError>
    where
        I: IntoIterator<Item = &'a Unit>,
    {
        self.fit.predict_mean(&self.regressors(units))
    }

    /// `∂ mean / ∂ coefficients`, one row per unit.
    pub fn gradient<'a, I>(&self, units: I) -> Result<DMatrix<f64>, GlmError>
    where
        I: IntoIterator<Item = &'a Unit>,
    {
        self.fit.mean_gradient(&self.regressors(units))
    }

    /// Intercept-augmented regressor row.
    pub fn augmented_row(&self, unit: &Unit) -> Vec<f64> {
        let mut row = self.select(self.design.row(unit));
        if self.fit.spec.add_intercept {
            row.insert(0, 1.0);
        }
        row
    }

    pub fn expect_subset(&self, model: &'static str, expected: Subset) -> Result<(), NuisanceError> {
        if self.subset == expected {
            Ok(())
        } else {
            Err(NuisanceError::Provenance {
                model,
                expected,
                found: self.subset,
            })
        }
    }
}

fn fit_model(
    model: &'static str,
    spec: GlmSpec,
    design: Design,
    subset: Subset,
    units: &[&Unit],
    response: &[f64],
) -> Result<FittedModel, NuisanceError> {
    let mut x = design.matrix(units.iter().copied());
    let mut columns = None;
    if design.encoding == Encoding::Saturated {
        let kept = identified_columns(&x, spec.add_intercept);
        if kept.len() < x.ncols() {
            log::debug!("{model}: dropping {} aliased saturated columns", x.ncols() - kept.len());
            x = x.select_columns(&kept);
            columns = Some(kept);
        }
    }
    let fit = glm::fit(spec, &x, response, None).map_err(|source| NuisanceError::Fit {
        model,
        subset,
        source,
    })?;
    Ok(FittedModel {
        fit,
        design,
        subset,
        columns,
    })
}

/// Greedy left-to-right pass keeping each column that is not (numerically) a
/// linear combination of the intercept and the columns kept before it.
fn identified_columns(x: &DMatrix<f64>, intercept: bool) -> Vec<usize> {
    const TOL: f64 = 1e-7;
    let n = x.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    if intercept && n > 0 {
        basis.push(DVector::from_element(n, 1.0 / (n as f64).sqrt()));
    }
    let mut kept = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 {
            continue;
        }
        let mut r = col;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&r);
                r -= b * c;
            }
        }
        let rn = r.norm();
        if rn > TOL * norm {
            basis.push(r / rn);
            kept.push(j);
        }
    }
    kept
}

fn arm(t: u8) -> bool {
    t == 1
}

fn outcome(u: &Unit) -> f64 {
    u.y.expect("observational units carry an outcome")
}

/// `μ̂_t(S,X)`: outcome on `(X,S)` over observational units with `T = t`.
pub fn fit_outcome_sx(data: &FusedDataset, t: u8, opts: &NuisanceOptions) -> Result<FittedModel, NuisanceError> {
    let units: Vec<&Unit> = data
        .observational()
        .filter(|u| u.treated == arm(t))
        .collect();
    let y: Vec<f64> = units.iter().map(|u| outcome(u)).collect();
    fit_model(
        "outcome model mu_t(S,X)",
        opts.spec(data.outcome_family().glm_family()),
        Design::new(Inputs::XS, opts.encoding),
        Subset::ObservationalArm(t),
        &units,
        &y,
    )
}

/// `μ̂_t(X)`: linear regression of the pseudo-outcome `μ̂_t(S_i,X_i)` on `X`
/// over RCT units. Predictions are never clamped, even for binary outcomes.
pub fn fit_outcome_x(
    data: &FusedDataset,
    mu_sx: &FittedModel,
    t: u8,
    opts: &NuisanceOptions,
) -> Result<FittedModel, NuisanceError> {
    const MODEL: &str = "outcome model mu_t(X)";
    mu_sx.expect_subset("outcome model mu_t(S,X)", Subset::ObservationalArm(t))?;
    let (units, subset): (Vec<&Unit>, _) = if opts.mu_x_arm_only {
        (
            data.rct().filter(|u| u.treated == arm(t)).collect(),
            Subset::RctArm(t),
        )
    } else {
        (data.rct().collect(), Subset::Rct)
    };
    let pseudo = units
        .iter()
        .map(|u| mu_sx.predict(u))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| NuisanceError::Fit {
            model: MODEL,
            subset,
            source,
        })?;
    fit_model(
        MODEL,
        opts.spec(glm::Family::Linear),
        Design::new(Inputs::X, opts.encoding).with_terms(opts.mu_x_terms),
        subset,
        &units,
        &pseudo,
    )
}

/// `ê(X)`: logistic regression of `T` on `X` over RCT units.
pub fn fit_rct_propensity(data: &FusedDataset, opts: &NuisanceOptions) -> Result<FittedModel, NuisanceError> {
    let units: Vec<&Unit> = data.rct().collect();
    let t: Vec<f64> = units.iter().map(|u| u.t()).collect();
    fit_model(
        "RCT propensity e(X)",
        opts.spec(glm::Family::Logistic),
        Design::new(Inputs::X, opts.encoding),
        Subset::Rct,
        &units,
        &t,
    )
}

const SELECTION: &str = "selection model g_t(S,X)";

fn selection_strata(units: &[&Unit], subset: Subset) -> Result<(), NuisanceError> {
    for (group, missing) in [(Group::Rct, 1u8), (Group::Observational, 0u8)] {
        if !units.iter().any(|u| u.group == group) {
            return Err(NuisanceError::EmptyStratum {
                model: SELECTION,
                subset,
                missing,
            });
        }
    }
    Ok(())
}

/// `ĝ_t(S,X) = pr(G=1 | S, X, T=t)`, fitted on both samples pooled within arm `t`.
pub fn fit_selection(data: &FusedDataset, t: u8, opts: &NuisanceOptions) -> Result<FittedModel, NuisanceError> {
    let subset = Subset::PooledArm(t);
    let units: Vec<&Unit> = data
        .units()
        .iter()
        .filter(|u| u.treated == arm(t))
        .collect();
    selection_strata(&units, subset)?;
    let g: Vec<f64> = units.iter().map(|u| u.g()).collect();
    fit_model(
        SELECTION,
        opts.spec(glm::Family::Logistic),
        Design::new(Inputs::XS, opts.encoding).with_terms(opts.selection_terms),
        subset,
        &units,
        &g,
    )
}

/// Single selection model on `(X,S,T)` over every unit. Predicting at a unit
/// of arm `t` gives `ĝ_t(S,X)`.
pub fn fit_selection_shared(data: &FusedDataset, opts: &NuisanceOptions) -> Result<FittedModel, NuisanceError> {
    let units: Vec<&Unit> = data.units().iter().collect();
    for t in 0..2u8 {
        let arm_units: Vec<&Unit> = units.iter().copied().filter(|u| u.treated == arm(t)).collect();
        selection_strata(&arm_units, Subset::PooledArm(t))?;
    }
    let g: Vec<f64> = units.iter().map(|u| u.g()).collect();
    fit_model(
        SELECTION,
        opts.spec(glm::Family::Logistic),
        Design::new(Inputs::XST, opts.encoding).with_terms(opts.selection_terms),
        Subset::Pooled,
        &units,
        &g,
    )
}

/// Both selection models according to `opts.selection_form`, indexed by arm.
pub fn fit_selection_pair(data: &FusedDataset, opts: &NuisanceOptions) -> Result<[FittedModel; 2], NuisanceError> {
    Ok(match opts.selection_form {
        SelectionForm::PerArm => [fit_selection(data, 0, opts)?, fit_selection(data, 1, opts)?],
        SelectionForm::Shared => {
            let m = fit_selection_shared(data, opts)?;
            [m.clone(), m]
        }
    })
}

/// `ĥ(X,S,T)`: outcome on `(X,S,T)` over observational units. Under mean
/// exchangeability this also estimates `E[Y | X, S, T, G=1]`.
pub fn fit_h(data: &FusedDataset, opts: &NuisanceOptions) -> Result<FittedModel, NuisanceError> {
    let units: Vec<&Unit> = data.observational().collect();
    let y: Vec<f64> = units.iter().map(|u| outcome(u)).collect();
    fit_model(
        "outcome model h(X,S,T)",
        opts.spec(data.outcome_family().glm_family()),
        Design::new(Inputs::XST, opts.encoding),
        Subset::Observational,
        &units,
        &y,
    )
}

/// Surrogate index `E[Y | S, X, G=0]`, pooled over treatment arms.
pub fn fit_surrogate_index(data: &FusedDataset, opts: &NuisanceOptions) -> Result<FittedModel, NuisanceError> {
    let units: Vec<&Unit> = data.observational().collect();
    let y: Vec<f64> = units.iter().map(|u| outcome(u)).collect();
    fit_model(
        "surrogate index",
        opts.spec(data.outcome_family().glm_family()),
        Design::new(Inputs::XS, opts.encoding),
        Subset::Observational,
        &units,
        &y,
    )
}

/// Externally supplied RCT propensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnownPropensity {
    Constant(f64),
    /// Indexed by dataset position; only RCT positions are required.
    PerUnit(Vec<Option<f64>>),
}

impl KnownPropensity {
    pub fn at(&self, index: usize) -> Option<f64> {
        match self {
            KnownPropensity::Constant(v) => Some(*v),
            KnownPropensity::PerUnit(v) => v.get(index).copied().flatten(),
        }
    }

    pub fn validate(&self, data: &FusedDataset) -> Result<(), NuisanceError> {
        if let KnownPropensity::PerUnit(v) = self {
            if v.len() != data.len() {
                return Err(NuisanceError::KnownPropensityLength {
                    expected: data.len(),
                    got: v.len(),
                });
            }
        }
        for (i, u) in data.units().iter().enumerate() {
            if !u.is_rct() {
                continue;
            }
            let value = self
                .at(i)
                .ok_or(NuisanceError::KnownPropensityMissing { unit: i })?;
            if !(value > 0.0 && value < 1.0) {
                return Err(NuisanceError::KnownPropensityOutOfRange { unit: i, value });
            }
        }
        Ok(())
    }

    /// Follows a resampling map: entry `j` of the result is entry `source[j]` here.
    pub fn reindex(&self, source: &[usize]) -> Self {
        match self {
            KnownPropensity::Constant(v) => KnownPropensity::Constant(*v),
            KnownPropensity::PerUnit(v) => {
                KnownPropensity::PerUnit(source.iter().map(|&i| v.get(i).copied().flatten()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropensityMode {
    Known(KnownPropensity),
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropensityModel {
    Known(KnownPropensity),
    Estimated(FittedModel),
}

/// Complete nuisance fits for the doubly robust estimator. Arrays are indexed by arm.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceSet {
    pub mu_sx: [FittedModel; 2],
    pub mu_x: [FittedModel; 2],
    pub e_x: PropensityModel,
    pub g_sx: [FittedModel; 2],
    pub h_xst: FittedModel,
    pub q_hat: f64,
    pub rho_hat: f64,
}

impl NuisanceSet {
    pub fn models(&self) -> Vec<(&'static str, &FittedModel)> {
        let mut out = vec![
            ("mu_0(S,X)", &self.mu_sx[0]),
            ("mu_1(S,X)", &self.mu_sx[1]),
            ("mu_0(X)", &self.mu_x[0]),
            ("mu_1(X)", &self.mu_x[1]),
            ("g_0(S,X)", &self.g_sx[0]),
            ("g_1(S,X)", &self.g_sx[1]),
            ("h(X,S,T)", &self.h_xst),
        ];
        if let PropensityModel::Estimated(e) = &self.e_x {
            out.push(("e(X)", e));
        }
        out
    }

    /// Checks every model was fitted on its designated subset and converged.
    pub fn check_provenance(&self) -> Result<(), NuisanceError> {
        for t in 0..2u8 {
            let ti = t as usize;
            self.mu_sx[ti].expect_subset("mu_t(S,X)", Subset::ObservationalArm(t))?;
            if !matches!(self.mu_x[ti].subset, Subset::Rct | Subset::RctArm(_))
                || self.mu_x[ti].subset == Subset::RctArm(1 - t)
            {
                return Err(NuisanceError::Provenance {
                    model: "mu_t(X)",
                    expected: Subset::Rct,
                    found: self.mu_x[ti].subset,
                });
            }
            if self.g_sx[ti].subset != Subset::Pooled {
                self.g_sx[ti].expect_subset("g_t(S,X)", Subset::PooledArm(t))?;
            }
        }
        self.h_xst.expect_subset("h(X,S,T)", Subset::Observational)?;
        if let PropensityModel::Estimated(e) = &self.e_x {
            e.expect_subset("e(X)", Subset::Rct)?;
        }
        for (name, m) in self.models() {
            if !m.fit.converged {
                return Err(NuisanceError::NotConverged { model: name });
            }
        }
        Ok(())
    }
}

/// Fits all nuisance models; the first failure aborts.
pub fn assemble(
    data: &FusedDataset,
    propensity: PropensityMode,
    opts: &NuisanceOptions,
) -> Result<NuisanceSet, NuisanceError> {
    let mu_sx = [fit_outcome_sx(data, 0, opts)?, fit_outcome_sx(data, 1, opts)?];
    let mu_x = [
        fit_outcome_x(data, &mu_sx[0], 0, opts)?,
        fit_outcome_x(data, &mu_sx[1], 1, opts)?,
    ];
    let e_x = match propensity {
        PropensityMode::Known(known) => {
            known.validate(data)?;
            PropensityModel::Known(known)
        }
        PropensityMode::Estimated => PropensityModel::Estimated(fit_rct_propensity(data, opts)?),
    };
    let g_sx = fit_selection_pair(data, opts)?;
    let h_xst = fit_h(data, opts)?;
    let set = NuisanceSet {
        mu_sx,
        mu_x,
        e_x,
        g_sx,
        h_xst,
        q_hat: data.q_hat(),
        rho_hat: data.rho_hat(),
    };
    set.check_provenance()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(group: Group, treated: bool, x: f64, s: f64, y: Option<f64>) -> Unit {
        Unit {
            group,
            treated,
            x: vec![x],
            s: vec![s],
            y,
        }
    }

    /// Small continuous dataset with `Y = S` exactly.
    fn y_equals_s() -> FusedDataset {
        let mut units = Vec::new();
        for i in 0..12 {
            let x = i as f64 * 0.37 - 1.0;
            let s = (i as f64 * 1.3).sin() + 0.2 * x;
            units.push(unit(Group::Observational, i % 2 == 0, x, s, Some(s)));
        }
        for i in 0..8 {
            let x = i as f64 * 0.21 - 0.5;
            let s = (i as f64 * 0.7).cos();
            units.push(unit(Group::Rct, i % 2 == 1, x, s, None));
        }
        FusedDataset::new(units, None).unwrap()
    }

    #[test]
    fn outcome_sx_recovers_exact_linear_truth() {
        let data = y_equals_s();
        let m = fit_outcome_sx(&data, 1, &NuisanceOptions::default()).unwrap();
        let c = &m.fit.coefficients;
        assert!(c[0].abs() < 1e-10 && c[1].abs() < 1e-10 && (c[2] - 1.0).abs() < 1e-10);
        assert!(m.fit.dispersion < 1e-20);
        assert_eq!(m.subset, Subset::ObservationalArm(1));
    }

    #[test]
    fn constant_pseudo_outcome_gives_constant_mu_x() {
        let mut units = y_equals_s().into_units();
        for u in units.iter_mut().filter(|u| !u.is_rct()) {
            u.y = Some(4.5);
        }
        let data = FusedDataset::new(units, None).unwrap();
        let opts = NuisanceOptions::default();
        let mu_sx = fit_outcome_sx(&data, 0, &opts).unwrap();
        let mu_x = fit_outcome_x(&data, &mu_sx, 0, &opts).unwrap();
        for u in data.units() {
            assert!((mu_x.predict(u).unwrap() - 4.5).abs() < 1e-10);
        }
    }

    #[test]
    fn h_with_y_equal_t() {
        let mut units = y_equals_s().into_units();
        for u in units.iter_mut().filter(|u| !u.is_rct()) {
            u.y = Some(u.t());
        }
        let data = FusedDataset::new(units, Some(crate::dataset::OutcomeFamily::Continuous)).unwrap();
        let h = fit_h(&data, &NuisanceOptions::default()).unwrap();
        let c = &h.fit.coefficients;
        assert!((c[3] - 1.0).abs() < 1e-10);
        assert!(c[0].abs() < 1e-10 && c[1].abs() < 1e-10 && c[2].abs() < 1e-10);
        assert!(h.fit.dispersion < 1e-20);
    }

    #[test]
    fn known_propensity_outside_unit_interval_rejected() {
        let data = y_equals_s();
        let err = assemble(
            &data,
            PropensityMode::Known(KnownPropensity::Constant(0.0)),
            &NuisanceOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("known propensity outside (0,1)"), "{err}");
    }

    #[test]
    fn known_propensity_per_unit_reindex() {
        let k = KnownPropensity::PerUnit(vec![Some(0.2), None, Some(0.7)]);
        assert_eq!(
            k.reindex(&[2, 2, 0, 1]),
            KnownPropensity::PerUnit(vec![Some(0.7), Some(0.7), Some(0.2), None])
        );
    }

    #[test]
    fn mu_x_from_wrong_arm_is_a_provenance_error() {
        let data = y_equals_s();
        let opts = NuisanceOptions::default();
        let mu_sx0 = fit_outcome_sx(&data, 0, &opts).unwrap();
        assert!(matches!(
            fit_outcome_x(&data, &mu_sx0, 1, &opts),
            Err(NuisanceError::Provenance { .. })
        ));
    }

    #[test]
    fn single_arm_rct_makes_mu_x_underdetermined() {
        let mut units: Vec<Unit> = y_equals_s().into_units().into_iter().filter(|u| !u.is_rct()).collect();
        units.push(unit(Group::Rct, true, 0.3, 0.1, None));
        units.push(unit(Group::Rct, false, 0.1, 0.4, None));
        let data = FusedDataset::new(units, None).unwrap();
        let opts = NuisanceOptions::default();
        let mu_sx = fit_outcome_sx(&data, 1, &opts).unwrap();
        assert!(matches!(
            fit_outcome_x(&data, &mu_sx, 1, &opts),
            Err(NuisanceError::Fit {
                source: GlmError::TooFewObservations { .. },
                ..
            })
        ));
    }
}
