//! Regressor construction for the nuisance models.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Unit;

/// Largest number of base columns a saturated encoding may interact.
pub const MAX_SATURATED_COLUMNS: usize = 12;

/// How base columns are turned into regressors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// Base columns enter linearly.
    #[default]
    Additive,
    /// Every product over a non-empty subset of the base columns. With binary
    /// base columns plus the intercept this is one free parameter per cell.
    Saturated,
}

/// Which unit fields feed a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Inputs {
    /// Covariates `X`.
    X,
    /// Covariates then surrogates `(X, S)`.
    XS,
    /// `(X, S, T)`.
    XST,
}

/// Drop every regressor (intercept-only model); used to build deliberately
/// misspecified nuisance fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terms {
    #[default]
    Full,
    InterceptOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Design {
    pub inputs: Inputs,
    pub encoding: Encoding,
    pub terms: Terms,
}

impl Design {
    pub fn new(inputs: Inputs, encoding: Encoding) -> Self {
        Self {
            inputs,
            encoding,
            terms: Terms::Full,
        }
    }

    pub fn with_terms(mut self, terms: Terms) -> Self {
        self.terms = terms;
        self
    }

    fn base(&self, unit: &Unit, treated: f64, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&unit.x);
        if matches!(self.inputs, Inputs::XS | Inputs::XST) {
            out.extend_from_slice(&unit.s);
        }
        if self.inputs == Inputs::XST {
            out.push(treated);
        }
    }

    /// Regressor row for `unit`, with the treatment column (if any) set to
    /// `treated` instead of the unit's own assignment.
    pub fn row_with_treatment(&self, unit: &Unit, treated: f64) -> Vec<f64> {
        if self.terms == Terms::InterceptOnly {
            return Vec::new();
        }
        let mut base = Vec::with_capacity(unit.x.len() + unit.s.len() + 1);
        self.base(unit, treated, &mut base);
        match self.encoding {
            Encoding::Additive => base,
            Encoding::Saturated => saturate(&base),
        }
    }

    pub fn row(&self, unit: &Unit) -> Vec<f64> {
        self.row_with_treatment(unit, unit.t())
    }

    /// Number of regressor columns for units with `p` covariates and `k` surrogates.
    pub fn width(&self, p: usize, k: usize) -> usize {
        if self.terms == Terms::InterceptOnly {
            return 0;
        }
        let m = match self.inputs {
            Inputs::X => p,
            Inputs::XS => p + k,
            Inputs::XST => p + k + 1,
        };
        match self.encoding {
            Encoding::Additive => m,
            Encoding::Saturated => (1usize << m) - 1,
        }
    }

    /// Stacks the rows of the given units into an `m × width` matrix.
    pub fn matrix<'a, I>(&self, units: I) -> DMatrix<f64>
    where
        I: IntoIterator<Item = &'a Unit>,
    {
        let rows: Vec<Vec<f64>> = units.into_iter().map(|u| self.row(u)).collect();
        stack(rows)
    }
}

pub(crate) fn stack(rows: Vec<Vec<f64>>) -> DMatrix<f64> {
    let m = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(m, w, |i, j| rows[i][j])
}

/// Products over all non-empty subsets, ordered by subset bitmask.
fn saturate(base: &[f64]) -> Vec<f64> {
    let m = base.len();
    assert!(
        m <= MAX_SATURATED_COLUMNS,
        "saturated encoding supports at most {MAX_SATURATED_COLUMNS} base columns, got {m}"
    );
    (1u32..(1u32 << m))
        .map(|mask| {
            (0..m)
                .filter(|j| mask & (1 << j) != 0)
                .map(|j| base[j])
                .product()
        })
        .collect()
}
