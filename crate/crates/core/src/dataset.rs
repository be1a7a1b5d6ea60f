//! The fused two-sample data model: RCT units without the long-term outcome
//! and observational units with it.

use std::fmt;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{Design, Encoding, Inputs};
use crate::glm::{self, GlmSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// `g = 1`
    Rct,
    /// `g = 0`
    Observational,
}

impl Group {
    pub fn indicator(self) -> f64 {
        match self {
            Group::Rct => 1.0,
            Group::Observational => 0.0,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Rct => "RCT",
            Group::Observational => "observational",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeFamily {
    Continuous,
    Binary,
}

impl OutcomeFamily {
    pub fn glm_family(self) -> glm::Family {
        match self {
            OutcomeFamily::Continuous => glm::Family::Linear,
            OutcomeFamily::Binary => glm::Family::Logistic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub group: Group,
    pub treated: bool,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    /// Present iff the unit is observational.
    pub y: Option<f64>,
}

impl Unit {
    pub fn g(&self) -> f64 {
        self.group.indicator()
    }

    pub fn t(&self) -> f64 {
        if self.treated {
            1.0
        } else {
            0.0
        }
    }

    pub fn is_rct(&self) -> bool {
        self.group == Group::Rct
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("no {0} columns found in header (expected {0}1, {0}2, ...)")]
    NoColumns(&'static str),
    #[error("line {line}: expected {expected} fields, found {found}")]
    InconsistentColumns {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column `{column}`: malformed numeric cell {value:?}")]
    MalformedCell {
        line: u64,
        column: String,
        value: String,
    },
    #[error("unit {unit}: {field} must be 0 or 1, got {value}")]
    NotIndicator {
        unit: usize,
        field: &'static str,
        value: f64,
    },
    #[error("unit {unit}: outcome present in RCT row")]
    OutcomeInRct { unit: usize },
    #[error("unit {unit}: outcome missing in observational row")]
    MissingOutcome { unit: usize },
    #[error("unit {unit}: non-finite {field} value")]
    NonFinite { unit: usize, field: &'static str },
    #[error("unit {unit}: expected {expected} {field} values, found {found}")]
    Dimension {
        unit: usize,
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("need at least one covariate and one surrogate column")]
    EmptyVectors,
    #[error("the {0} sample is empty")]
    EmptyGroup(Group),
    #[error("the {group} sample has no units with T = {arm}")]
    EmptyArm { group: Group, arm: u8 },
    #[error("unit {unit}: binary outcome family requires y in {{0,1}}, got {value}")]
    NonBinaryOutcome { unit: usize, value: f64 },
    #[error("overlap margin must lie in (0, 0.5), got {0}")]
    InvalidEpsilon(f64),
}

/// Validated fused dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedDataset {
    units: Vec<Unit>,
    n1: usize,
    n0: usize,
    p: usize,
    k: usize,
    outcome_family: OutcomeFamily,
}

impl FusedDataset {
    /// Validates `units`. With `family = None` the outcome family is binary iff
    /// every observed outcome is 0 or 1.
    pub fn new(units: Vec<Unit>, family: Option<OutcomeFamily>) -> Result<Self, DataError> {
        let first = units.first().ok_or(DataError::EmptyGroup(Group::Rct))?;
        let (p, k) = (first.x.len(), first.s.len());
        if p == 0 || k == 0 {
            return Err(DataError::EmptyVectors);
        }
        let mut arms = [[0usize; 2]; 2];
        for (i, u) in units.iter().enumerate() {
            if u.x.len() != p {
                return Err(DataError::Dimension {
                    unit: i,
                    field: "covariate",
                    expected: p,
                    found: u.x.len(),
                });
            }
            if u.s.len() != k {
                return Err(DataError::Dimension {
                    unit: i,
                    field: "surrogate",
                    expected: k,
                    found: u.s.len(),
                });
            }
            if u.x.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { unit: i, field: "covariate" });
            }
            if u.s.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { unit: i, field: "surrogate" });
            }
            match (u.group, u.y) {
                (Group::Rct, Some(_)) => return Err(DataError::OutcomeInRct { unit: i }),
                (Group::Observational, None) => return Err(DataError::MissingOutcome { unit: i }),
                (Group::Observational, Some(y)) if !y.is_finite() => {
                    return Err(DataError::NonFinite { unit: i, field: "outcome" })
                }
                _ => {}
            }
            arms[usize::from(u.is_rct())][usize::from(u.treated)] += 1;
        }
        let n1 = arms[1][0] + arms[1][1];
        let n0 = arms[0][0] + arms[0][1];
        if n1 == 0 {
            return Err(DataError::EmptyGroup(Group::Rct));
        }
        if n0 == 0 {
            return Err(DataError::EmptyGroup(Group::Observational));
        }
        for (gi, group) in [(1, Group::Rct), (0, Group::Observational)] {
            for arm in 0..2u8 {
                if arms[gi][arm as usize] == 0 {
                    return Err(DataError::EmptyArm { group, arm });
                }
            }
        }
        let all_binary = units
            .iter()
            .filter_map(|u| u.y)
            .all(|y| y == 0.0 || y == 1.0);
        let outcome_family = match family {
            Some(OutcomeFamily::Binary) => {
                if let Some((i, y)) = units
                    .iter()
                    .enumerate()
                    .filter_map(|(i, u)| u.y.map(|y| (i, y)))
                    .find(|(_, y)| *y != 0.0 && *y != 1.0)
                {
                    return Err(DataError::NonBinaryOutcome { unit: i, value: y });
                }
                OutcomeFamily::Binary
            }
            Some(f) => f,
            None if all_binary => OutcomeFamily::Binary,
            None => OutcomeFamily::Continuous,
        };
        Ok(Self {
            units,
            n1,
            n0,
            p,
            k,
            outcome_family,
        })
    }

    /// Rebuilds a dataset over new units, keeping this dataset's outcome family.
    pub fn with_units(&self, units: Vec<Unit>) -> Result<Self, DataError> {
        Self::new(units, Some(self.outcome_family))
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn into_units(self) -> Vec<Unit> {
        self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn covariate_dim(&self) -> usize {
        self.p
    }

    pub fn surrogate_dim(&self) -> usize {
        self.k
    }

    pub fn outcome_family(&self) -> OutcomeFamily {
        self.outcome_family
    }

    /// `n1 / (n1 + n0)`.
    pub fn q_hat(&self) -> f64 {
        self.n1 as f64 / self.len() as f64
    }

    /// `n1 / n0`.
    pub fn rho_hat(&self) -> f64 {
        self.n1 as f64 / self.n0 as f64
    }

    pub fn rct(&self) -> impl Iterator<Item = &Unit> + '_ {
        self.units.iter().filter(|u| u.is_rct())
    }

    pub fn observational(&self) -> impl Iterator<Item = &Unit> + '_ {
        self.units.iter().filter(|u| !u.is_rct())
    }

    /// Positions of the units in `group`, in dataset order.
    pub fn positions(&self, group: Group) -> Vec<usize> {
        self.units
            .iter()
            .enumerate()
            .filter(|(_, u)| u.group == group)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Column names used when reading a CSV. `None` for `s`/`x` picks up every
/// header named `s<j>` / `x<j>`, ordered by `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub g: String,
    pub t: String,
    pub y: String,
    pub s: Option<Vec<String>>,
    pub x: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            g: "g".into(),
            t: "t".into(),
            y: "y".into(),
            s: None,
            x: None,
        }
    }
}

fn indexed_columns(headers: &csv::StringRecord, prefix: char) -> Vec<(usize, String)> {
    let mut found: Vec<(usize, usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(pos, h)| {
            let rest = h.strip_prefix(prefix)?;
            let j: usize = rest.parse().ok()?;
            Some((j, pos, h.to_string()))
        })
        .collect();
    found.sort();
    found.into_iter().map(|(_, pos, h)| (pos, h)).collect()
}

fn locate(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

fn require(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    locate(headers, name).ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn named_columns(
    headers: &csv::StringRecord,
    names: &Option<Vec<String>>,
    prefix: char,
    label: &'static str,
) -> Result<Vec<(usize, String)>, DataError> {
    let cols = match names {
        Some(names) => names
            .iter()
            .map(|n| require(headers, n).map(|pos| (pos, n.clone())))
            .collect::<Result<Vec<_>, _>>()?,
        None => indexed_columns(headers, prefix),
    };
    if cols.is_empty() {
        return Err(DataError::NoColumns(label));
    }
    Ok(cols)
}

fn parse_cell(record: &csv::StringRecord, pos: usize, column: &str, line: u64) -> Result<f64, DataError> {
    let raw = record.get(pos).unwrap_or("").trim();
    raw.parse::<f64>().map_err(|_| DataError::MalformedCell {
        line,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

fn parse_indicator(
    record: &csv::StringRecord,
    pos: usize,
    column: &str,
    line: u64,
    unit: usize,
    field: &'static str,
) -> Result<bool, DataError> {
    let v = parse_cell(record, pos, column, line)?;
    match v {
        v if v == 1.0 => Ok(true),
        v if v == 0.0 => Ok(false),
        value => Err(DataError::NotIndicator { unit, field, value }),
    }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Reads units from one CSV. When `forced_group` is set the `g` column is
/// optional, and for RCT files so is the `y` column.
fn read_units(
    path: &Path,
    schema: &CsvSchema,
    forced_group: Option<Group>,
    first_unit: usize,
) -> Result<Vec<Unit>, DataError> {
    let mut reader = open(path)?;
    let headers = reader.headers()?.clone();
    let g_pos = match forced_group {
        Some(_) => locate(&headers, &schema.g),
        None => Some(require(&headers, &schema.g)?),
    };
    let t_pos = require(&headers, &schema.t)?;
    let y_pos = match forced_group {
        Some(Group::Rct) => locate(&headers, &schema.y),
        _ => Some(require(&headers, &schema.y)?),
    };
    let s_cols = named_columns(&headers, &schema.s, 's', "surrogate")?;
    let x_cols = named_columns(&headers, &schema.x, 'x', "covariate")?;

    let mut units = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(DataError::InconsistentColumns {
                line,
                expected: headers.len(),
                found: record.len(),
            });
        }
        let unit = first_unit + units.len();
        let group = match g_pos {
            Some(pos) => {
                let g = parse_indicator(&record, pos, &schema.g, line, unit, "g")?;
                let group = if g { Group::Rct } else { Group::Observational };
                if let Some(forced) = forced_group {
                    if forced != group {
                        return Err(DataError::NotIndicator {
                            unit,
                            field: "g",
                            value: group.indicator(),
                        });
                    }
                }
                group
            }
            None => forced_group.expect("g column is required without a forced group"),
        };
        let treated = parse_indicator(&record, t_pos, &schema.t, line, unit, "t")?;
        let y = match y_pos {
            Some(pos) if !record.get(pos).unwrap_or("").trim().is_empty() => {
                Some(parse_cell(&record, pos, &schema.y, line)?)
            }
            _ => None,
        };
        let s = s_cols
            .iter()
            .map(|(pos, name)| parse_cell(&record, *pos, name, line))
            .collect::<Result<Vec<_>, _>>()?;
        let x = x_cols
            .iter()
            .map(|(pos, name)| parse_cell(&record, *pos, name, line))
            .collect::<Result<Vec<_>, _>>()?;
        units.push(Unit {
            group,
            treated,
            x,
            s,
            y,
        });
    }
    Ok(units)
}

/// Loads a fused CSV with a group column. Row order is preserved.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    family: Option<OutcomeFamily>,
) -> Result<FusedDataset, DataError> {
    let units = read_units(path.as_ref(), schema, None, 0)?;
    FusedDataset::new(units, family)
}

/// Loads an RCT file and an observational file; the group column is optional
/// in both and the outcome column is optional in the RCT file. RCT rows come
/// first in the result.
pub fn load_split_csv(
    rct: impl AsRef<Path>,
    obs: impl AsRef<Path>,
    schema: &CsvSchema,
    family: Option<OutcomeFamily>,
) -> Result<FusedDataset, DataError> {
    let mut units = read_units(rct.as_ref(), schema, Some(Group::Rct), 0)?;
    let more = read_units(obs.as_ref(), schema, Some(Group::Observational), units.len())?;
    units.extend(more);
    FusedDataset::new(units, family)
}

/// Reads one optional numeric column (empty cells become `None`), row-aligned
/// with [`load_csv`].
pub fn load_column(path: impl AsRef<Path>, column: &str) -> Result<Vec<Option<f64>>, DataError> {
    let mut reader = open(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let pos = require(&headers, column)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let raw = record.get(pos).unwrap_or("").trim();
        out.push(if raw.is_empty() {
            None
        } else {
            Some(parse_cell(&record, pos, column, line)?)
        });
    }
    Ok(out)
}

/// Writes the canonical `g,t,y,s1..sk,x1..xp` layout. Floats use Rust's
/// shortest round-trip formatting, so reloading is bit-exact.
pub fn write_csv<W: io::Write>(data: &FusedDataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["g".to_string(), "t".to_string(), "y".to_string()];
    header.extend((1..=data.k).map(|j| format!("s{j}")));
    header.extend((1..=data.p).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for u in &data.units {
        let mut row = vec![
            (u.g() as u8).to_string(),
            (u.t() as u8).to_string(),
            u.y.map(|y| y.to_string()).unwrap_or_default(),
        ];
        row.extend(u.s.iter().map(f64::to_string));
        row.extend(u.x.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Fitted extremes for one overlap clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseCheck {
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub violated: bool,
    /// Set when the underlying logistic fit failed.
    pub error: Option<String>,
}

impl ClauseCheck {
    fn failed(err: impl fmt::Display) -> Self {
        Self {
            min: None,
            max: None,
            violated: false,
            error: Some(err.to_string()),
        }
    }

    fn from_values(values: &[f64], epsilon: f64, upper: bool) -> Self {
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self {
            min: Some(min),
            max: Some(max),
            violated: min < epsilon || (upper && max > 1.0 - epsilon),
            error: None,
        }
    }
}

/// Strict-overlap diagnostics. Advisory only: estimation does not stop on a
/// violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub epsilon: f64,
    /// Fitted `pr(T=1 | X, G=1)` over RCT units.
    pub rct_propensity: ClauseCheck,
    /// Fitted `pr(T=1 | X, S, G=0)` over observational units.
    pub obs_propensity: ClauseCheck,
    /// Fitted `pr(G=0 | X, S)` at RCT units; only the lower bound is checked.
    pub obs_membership: ClauseCheck,
}

impl OverlapReport {
    pub fn any_violation(&self) -> bool {
        self.rct_propensity.violated || self.obs_propensity.violated || self.obs_membership.violated
    }

    pub fn any_failure(&self) -> bool {
        [&self.rct_propensity, &self.obs_propensity, &self.obs_membership]
            .iter()
            .any(|c| c.error.is_some())
    }
}

fn fitted_probabilities<'a>(
    inputs: Inputs,
    fit_units: &[&'a Unit],
    response: impl Fn(&Unit) -> f64,
    eval_units: &[&'a Unit],
) -> Result<Vec<f64>, glm::GlmError> {
    let design = Design::new(inputs, Encoding::Additive);
    let x = design.matrix(fit_units.iter().copied());
    let y: Vec<f64> = fit_units.iter().map(|u| response(u)).collect();
    let fit = glm::fit(GlmSpec::logistic(), &x, &y, None)?;
    let ex = design.matrix(eval_units.iter().copied());
    Ok(fit.predict_mean(&ex)?.iter().copied().collect())
}

/// Fits the three overlap models and flags fitted probabilities outside
/// `[epsilon, 1 − epsilon]`.
pub fn overlap_diagnostics(data: &FusedDataset, epsilon: f64) -> Result<OverlapReport, DataError> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(DataError::InvalidEpsilon(epsilon));
    }
    let rct: Vec<&Unit> = data.rct().collect();
    let obs: Vec<&Unit> = data.observational().collect();
    let all: Vec<&Unit> = data.units().iter().collect();

    let check = |r: Result<Vec<f64>, glm::GlmError>, upper: bool| match r {
        Ok(v) => ClauseCheck::from_values(&v, epsilon, upper),
        Err(e) => ClauseCheck::failed(e),
    };
    Ok(OverlapReport {
        epsilon,
        rct_propensity: check(fitted_probabilities(Inputs::X, &rct, Unit::t, &rct), true),
        obs_propensity: check(fitted_probabilities(Inputs::XS, &obs, Unit::t, &obs), true),
        obs_membership: check(
            fitted_probabilities(Inputs::XS, &all, |u| 1.0 - u.g(), &rct),
            false,
        ),
    })
}
