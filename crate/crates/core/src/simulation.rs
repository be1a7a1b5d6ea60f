//! The sixteen simulation designs and the Monte Carlo harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, Settings};
use crate::dataset::{DataError, FusedDataset, Group, OutcomeFamily, Unit};
use crate::estimators::EstimatorKind;
use crate::glm::expit;
use crate::inference::{normal_quantile, sample_sd};
use crate::nuisance::KnownPropensity;
use crate::rng::substream;

/// Largest tolerated per-estimator fraction of failed replicates.
pub const MAX_REPLICATE_FAILURE_RATE: f64 = 0.1;

pub const DEFAULT_ORACLE_N: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    /// Gaussian covariates and surrogate.
    Continuous,
    /// Bernoulli(1/2) covariates and a Bernoulli surrogate.
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateForm {
    /// `U + c(X1 + X2) + T`.
    Linear,
    /// `U² + c(X1² + X2²) + T`.
    Nonlinear,
}

/// Observational treatment assignment, `pr(T=1 | X, U) = expit(·)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// `U + X1 + X2`.
    Confounded,
    /// `U + X1 + X2·U`.
    ConfoundedInteraction,
    /// `X1 + X2`.
    CovariatesOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimCase {
    pub id: u8,
    pub outcome_family: OutcomeFamily,
    pub support: Support,
    /// `U ~ N(1, 4)` instead of `N(0, 1)` in the observational sample.
    pub u_shift: bool,
    /// `U` enters the outcome equation.
    pub u_affects_y: bool,
    pub surrogate_form: SurrogateForm,
    /// Coefficient on the covariate term of the surrogate equation.
    pub surrogate_x_coef: f64,
    /// Coefficient on `X1 + X2` in the outcome equation.
    pub outcome_x_coef: f64,
    /// Direct treatment effect on the surrogate and on the outcome.
    pub treatment_coef: f64,
    /// Observational covariate mean and standard deviation (continuous support).
    pub obs_x_mean: f64,
    pub obs_x_sd: f64,
    pub assignment: Assignment,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown simulation case {0} (expected 1..=16)")]
    UnknownCase(u32),
    #[error("invalid Monte Carlo configuration: {0}")]
    InvalidConfig(String),
    #[error("generated data rejected: {0}")]
    Data(#[from] DataError),
    #[error("{estimator}: {failed} of {reps} replicates failed ({})", census_text(.census))]
    TooManyFailures {
        estimator: EstimatorKind,
        failed: usize,
        reps: usize,
        census: BTreeMap<String, usize>,
    },
    #[error("malformed table CSV at line {line}: {message}")]
    TableParse { line: usize, message: String },
}

fn census_text(census: &BTreeMap<String, usize>) -> String {
    census
        .iter()
        .map(|(k, v)| format!("{v}× {k}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl SimCase {
    pub fn from_id(id: u32) -> Result<Self, SimError> {
        if !(1..=16).contains(&id) {
            return Err(SimError::UnknownCase(id));
        }
        let id8 = id as u8;
        let binary = matches!(id, 7..=12 | 15 | 16);
        let discrete = matches!(id, 5 | 6 | 11 | 12);
        let nonlinear = matches!(id, 2 | 4 | 6 | 8 | 10 | 12 | 14 | 16);
        Ok(Self {
            id: id8,
            outcome_family: if binary {
                OutcomeFamily::Binary
            } else {
                OutcomeFamily::Continuous
            },
            support: if discrete { Support::Discrete } else { Support::Continuous },
            u_shift: matches!(id, 3 | 4 | 9 | 10),
            u_affects_y: matches!(id, 13..=16),
            surrogate_form: if nonlinear {
                SurrogateForm::Nonlinear
            } else {
                SurrogateForm::Linear
            },
            surrogate_x_coef: if matches!(id, 5 | 6) { -2.0 } else { 2.0 },
            outcome_x_coef: 3.0,
            treatment_coef: 1.0,
            obs_x_mean: if matches!(id, 8 | 10) { 0.0 } else { 1.0 },
            obs_x_sd: 2.0,
            assignment: match id {
                2 | 4 | 6 => Assignment::ConfoundedInteraction,
                13..=16 => Assignment::CovariatesOnly,
                _ => Assignment::Confounded,
            },
        })
    }

    fn surrogate_index(&self, u: f64, x: [f64; 2], t: f64) -> f64 {
        let c = self.surrogate_x_coef;
        match self.surrogate_form {
            SurrogateForm::Linear => u + c * (x[0] + x[1]) + self.treatment_coef * t,
            SurrogateForm::Nonlinear => u * u + c * (x[0] * x[0] + x[1] * x[1]) + self.treatment_coef * t,
        }
    }

    fn outcome_index(&self, u: f64, x: [f64; 2], s: f64, t: f64) -> f64 {
        let base = self.treatment_coef * t + self.outcome_x_coef * (x[0] + x[1]) + s;
        if self.u_affects_y {
            base + u
        } else {
            base
        }
    }

    fn assignment_index(&self, u: f64, x: [f64; 2]) -> f64 {
        match self.assignment {
            Assignment::Confounded => u + x[0] + x[1],
            Assignment::ConfoundedInteraction => u + x[0] + x[1] * u,
            Assignment::CovariatesOnly => x[0] + x[1],
        }
    }

    fn draw_coordinate(&self, group: Group, rng: &mut impl Rng) -> f64 {
        match (self.support, group) {
            (Support::Discrete, _) => (rng.random::<f64>() < 0.5) as u8 as f64,
            (Support::Continuous, Group::Rct) => rng.sample(StandardNormal),
            (Support::Continuous, Group::Observational) => {
                self.obs_x_mean + self.obs_x_sd * rng.sample::<f64, _>(StandardNormal)
            }
        }
    }

    fn draw_x(&self, group: Group, rng: &mut impl Rng) -> [f64; 2] {
        let x1 = self.draw_coordinate(group, rng);
        [x1, self.draw_coordinate(group, rng)]
    }

    fn draw_u(&self, group: Group, rng: &mut impl Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        if group == Group::Observational && self.u_shift {
            1.0 + 2.0 * z
        } else {
            z
        }
    }

    /// Surrogate given its index and one noise draw: Gaussian noise for
    /// continuous support, a uniform threshold for discrete.
    fn surrogate(&self, index: f64, noise: SurrogateNoise) -> f64 {
        match noise {
            SurrogateNoise::Gaussian(e) => index + e,
            SurrogateNoise::Uniform(v) => (v < expit(index)) as u8 as f64,
        }
    }

    fn surrogate_noise(&self, rng: &mut impl Rng) -> SurrogateNoise {
        match self.support {
            Support::Continuous => SurrogateNoise::Gaussian(rng.sample(StandardNormal)),
            Support::Discrete => SurrogateNoise::Uniform(rng.random()),
        }
    }

    fn outcome(&self, index: f64, noise: OutcomeNoise) -> f64 {
        match noise {
            OutcomeNoise::Gaussian(e) => index + e,
            OutcomeNoise::Uniform(w) => (w < expit(index)) as u8 as f64,
        }
    }

    fn outcome_noise(&self, rng: &mut impl Rng) -> OutcomeNoise {
        match self.outcome_family {
            OutcomeFamily::Continuous => OutcomeNoise::Gaussian(rng.sample(StandardNormal)),
            OutcomeFamily::Binary => OutcomeNoise::Uniform(rng.random()),
        }
    }

    /// The closed-form τ, where one exists.
    pub fn analytic_tau(&self) -> Option<f64> {
        if self.outcome_family != OutcomeFamily::Continuous {
            return None;
        }
        let direct = self.treatment_coef;
        match self.support {
            // S is additive in T with unit coefficient and Y is linear in S.
            Support::Continuous => Some(direct + self.treatment_coef),
            // E[S(1) − S(0)] = E[expit(a + 1) − expit(a)] with U ~ N(0,1) and
            // each of the four covariate cells equally likely.
            Support::Discrete => {
                let mut total = 0.0;
                for x1 in [0.0, 1.0] {
                    for x2 in [0.0, 1.0] {
                        let lift = |u: f64| {
                            let a = self.surrogate_index(u, [x1, x2], 0.0);
                            expit(a + self.treatment_coef) - expit(a)
                        };
                        total += 0.25 * gaussian_expectation(lift);
                    }
                }
                Some(direct + total)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum SurrogateNoise {
    Gaussian(f64),
    Uniform(f64),
}

#[derive(Debug, Clone, Copy)]
enum OutcomeNoise {
    Gaussian(f64),
    Uniform(f64),
}

/// `E[f(Z)]` for `Z ~ N(0,1)` by composite Simpson on `[−12, 12]`.
fn gaussian_expectation(f: impl Fn(f64) -> f64) -> f64 {
    const STEPS: usize = 4000;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / STEPS as f64;
    let density = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let g = |z: f64| f(z) * density(z);
    let mut acc = g(lo) + g(hi);
    for i in 1..STEPS {
        let z = lo + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(z);
    }
    acc * h / 3.0
}

/// A generated dataset plus the RCT outcomes it withholds.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDraw {
    pub data: FusedDataset,
    /// Realized long-term outcomes of the RCT units, in dataset order.
    pub rct_outcomes: Vec<f64>,
}

/// One unit with both potential surrogates and outcomes under shared noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialOutcomes {
    pub s: [f64; 2],
    pub y: [f64; 2],
}

impl SimCase {
    fn draw_unit(&self, group: Group, rng: &mut impl Rng) -> (Unit, f64) {
        let x = self.draw_x(group, rng);
        let u = self.draw_u(group, rng);
        let p = match group {
            Group::Rct => 0.5,
            Group::Observational => expit(self.assignment_index(u, x)),
        };
        let t = (rng.random::<f64>() < p) as u8 as f64;
        let s = self.surrogate(self.surrogate_index(u, x, t), self.surrogate_noise(rng));
        let y = self.outcome(self.outcome_index(u, x, s, t), self.outcome_noise(rng));
        let unit = Unit {
            group,
            treated: t == 1.0,
            x: x.to_vec(),
            s: vec![s],
            y: (group == Group::Observational).then_some(y),
        };
        (unit, y)
    }

    /// Draws `n1` RCT units followed by `n0` observational units.
    pub fn generate_with(&self, n1: usize, n0: usize, rng: &mut impl Rng) -> Result<SimDraw, SimError> {
        let mut units = Vec::with_capacity(n1 + n0);
        let mut rct_outcomes = Vec::with_capacity(n1);
        for _ in 0..n1 {
            let (u, y) = self.draw_unit(Group::Rct, rng);
            units.push(u);
            rct_outcomes.push(y);
        }
        for _ in 0..n0 {
            units.push(self.draw_unit(Group::Observational, rng).0);
        }
        Ok(SimDraw {
            data: FusedDataset::new(units, Some(self.outcome_family))?,
            rct_outcomes,
        })
    }

    pub fn generate(&self, n1: usize, n0: usize, seed: u64) -> Result<SimDraw, SimError> {
        self.generate_with(n1, n0, &mut substream(seed, &[self.id as u64]))
    }

    /// RCT-population potential outcomes with common random numbers.
    pub fn potential_outcomes(&self, rng: &mut impl Rng) -> PotentialOutcomes {
        let x = self.draw_x(Group::Rct, rng);
        let u = self.draw_u(Group::Rct, rng);
        let sn = self.surrogate_noise(rng);
        let yn = self.outcome_noise(rng);
        let mut out = PotentialOutcomes { s: [0.0; 2], y: [0.0; 2] };
        for t in 0..2 {
            let tf = t as f64;
            let s = self.surrogate(self.surrogate_index(u, x, tf), sn);
            out.s[t] = s;
            out.y[t] = self.outcome(self.outcome_index(u, x, s, tf), yn);
        }
        out
    }

    /// Monte Carlo τ: the mean of `Y(1) − Y(0)` over `oracle_n` RCT units.
    pub fn true_tau(&self, oracle_n: usize, seed: u64) -> f64 {
        assert!(oracle_n >= 1000, "oracle_n must be at least 1000");
        let mut rng = substream(seed, &[self.id as u64, u64::MAX]);
        let total: f64 = (0..oracle_n)
            .map(|_| {
                let p = self.potential_outcomes(&mut rng);
                p.y[1] - p.y[0]
            })
            .sum();
        total / oracle_n as f64
    }

    /// Analytic τ where available, otherwise the Monte Carlo oracle.
    pub fn reference_tau(&self, oracle_n: usize, seed: u64) -> f64 {
        self.analytic_tau().unwrap_or_else(|| self.true_tau(oracle_n, seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub case: SimCase,
    pub n1: usize,
    pub n0: usize,
    pub reps: usize,
    /// Bootstrap resamples per replicate; 0 skips the bootstrap.
    pub bootstrap_b: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub settings: Settings,
    pub oracle_n: usize,
}

impl McConfig {
    /// The simulation defaults: RCT propensity known to be 1/2, plug-in
    /// inference only, all four estimators.
    pub fn new(case: SimCase, n1: usize, n0: usize, reps: usize, seed: u64) -> Self {
        Self {
            case,
            n1,
            n0,
            reps,
            bootstrap_b: 0,
            seed,
            estimators: EstimatorKind::ALL.to_vec(),
            settings: Settings {
                known_propensity: Some(KnownPropensity::Constant(0.5)),
                ..Settings::default()
            },
            oracle_n: DEFAULT_ORACLE_N,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_owned()));
        if self.reps < 1 {
            return bad("reps must be at least 1");
        }
        if self.n1 < 1 || self.n0 < 1 {
            return bad("n1 and n0 must be at least 1");
        }
        if self.bootstrap_b == 1 {
            return bad("bootstrap_b must be 0 or at least 2");
        }
        if self.estimators.is_empty() {
            return bad("no estimators selected");
        }
        if self.oracle_n < 1000 {
            return bad("oracle_n must be at least 1000");
        }
        if !(self.settings.alpha > 0.0 && self.settings.alpha < 1.0) {
            return bad("alpha must lie in (0,1)");
        }
        Ok(())
    }
}

/// One estimator's outcome in one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub tau_hat: f64,
    pub se: f64,
    pub se_boot: Option<f64>,
}

/// Monte Carlo summary for one estimator. Values are on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub successes: usize,
    pub fail_count: usize,
    pub failure_census: BTreeMap<String, usize>,
    pub mean_estimate: f64,
    pub bias: f64,
    /// Absent with fewer than two successful replicates.
    pub sd: Option<f64>,
    pub ese: f64,
    pub cp95: f64,
    pub ese_b: Option<f64>,
    pub cp95_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub case: u8,
    pub n1: usize,
    pub n0: usize,
    pub reps: usize,
    pub bootstrap_b: usize,
    pub true_tau: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl McReport {
    pub fn summary(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|s| s.estimator == kind)
    }
}

fn run_replicate(cfg: &McConfig, rep: usize) -> Result<Vec<Result<ReplicateResult, String>>, SimError> {
    let mut rng = substream(cfg.seed, &[cfg.case.id as u64, rep as u64]);
    let draw = cfg.case.generate_with(cfg.n1, cfg.n0, &mut rng)?;
    let boot_seed: u64 = rng.random();
    Ok(cfg
        .estimators
        .iter()
        .map(|&kind| {
            let (tau_hat, se) = analysis::plugin(kind, &draw.data, &cfg.settings).map_err(|e| e.to_string())?;
            let se_boot = if cfg.bootstrap_b >= 2 {
                let b = analysis::bootstrap(kind, &draw.data, &cfg.settings, cfg.bootstrap_b, boot_seed)
                    .map_err(|e| format!("bootstrap: {e}"))?;
                Some(b.se)
            } else {
                None
            };
            Ok(ReplicateResult { tau_hat, se, se_boot })
        })
        .collect())
}

/// Runs the replicates in parallel and reduces them in replicate order.
pub fn run_monte_carlo(cfg: &McConfig) -> Result<McReport, SimError> {
    let outcomes = run_replicates(cfg)?;
    summarize(cfg, &outcomes)
}

/// Per-replicate outcomes, indexed `[replicate][estimator]`.
pub fn run_replicates(cfg: &McConfig) -> Result<Vec<Vec<Result<ReplicateResult, String>>>, SimError> {
    cfg.validate()?;
    (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replicate(cfg, rep))
        .collect()
}

/// Aggregates per-replicate outcomes against the reference τ.
pub fn summarize(cfg: &McConfig, outcomes: &[Vec<Result<ReplicateResult, String>>]) -> Result<McReport, SimError> {
    let true_tau = cfg.case.reference_tau(cfg.oracle_n, cfg.seed);
    let z = normal_quantile(1.0 - cfg.settings.alpha / 2.0);
    let covers = |tau: f64, se: f64| (tau - true_tau).abs() <= z * se;
    let mut estimators = Vec::with_capacity(cfg.estimators.len());
    for (k, &kind) in cfg.estimators.iter().enumerate() {
        let mut ok = Vec::new();
        let mut census = BTreeMap::new();
        for rep in outcomes {
            match &rep[k] {
                Ok(r) => ok.push(*r),
                Err(msg) => *census.entry(msg.clone()).or_insert(0) += 1,
            }
        }
        let failed = cfg.reps - ok.len();
        if failed as f64 > MAX_REPLICATE_FAILURE_RATE * cfg.reps as f64 || ok.is_empty() {
            return Err(SimError::TooManyFailures {
                estimator: kind,
                failed,
                reps: cfg.reps,
                census,
            });
        }
        let m = ok.len() as f64;
        let taus: Vec<f64> = ok.iter().map(|r| r.tau_hat).collect();
        let mean_estimate = taus.iter().sum::<f64>() / m;
        let boot: Vec<(f64, f64)> = ok.iter().filter_map(|r| r.se_boot.map(|s| (r.tau_hat, s))).collect();
        let (ese_b, cp95_b) = if boot.is_empty() {
            (None, None)
        } else {
            let mb = boot.len() as f64;
            (
                Some(boot.iter().map(|b| b.1).sum::<f64>() / mb),
                Some(boot.iter().filter(|b| covers(b.0, b.1)).count() as f64 / mb),
            )
        };
        estimators.push(EstimatorSummary {
            estimator: kind,
            successes: ok.len(),
            fail_count: failed,
            failure_census: census,
            mean_estimate,
            bias: mean_estimate - true_tau,
            sd: (ok.len() >= 2).then(|| sample_sd(&taus)),
            ese: ok.iter().map(|r| r.se).sum::<f64>() / m,
            cp95: ok.iter().filter(|r| covers(r.tau_hat, r.se)).count() as f64 / m,
            ese_b,
            cp95_b,
        });
    }
    Ok(McReport {
        case: cfg.case.id,
        n1: cfg.n1,
        n0: cfg.n0,
        reps: cfg.reps,
        bootstrap_b: cfg.bootstrap_b,
        true_tau,
        estimators,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Text,
}

pub const TABLE_CSV_HEADER: &str = "case,estimator,n1,n0,reps,bias,sd,ese,cp95,ese_b,cp95_b,fail_count,true_tau";

/// One row of the machine-readable table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub case: u8,
    pub estimator: EstimatorKind,
    pub n1: usize,
    pub n0: usize,
    pub reps: usize,
    pub bias: f64,
    pub sd: Option<f64>,
    pub ese: f64,
    pub cp95: f64,
    pub ese_b: Option<f64>,
    pub cp95_b: Option<f64>,
    pub fail_count: usize,
    pub true_tau: f64,
}

pub fn table_rows(reports: &[McReport]) -> Vec<TableRow> {
    let mut rows = Vec::new();
    for kind in EstimatorKind::ALL {
        for r in reports {
            if let Some(s) = r.summary(kind) {
                rows.push(TableRow {
                    case: r.case,
                    estimator: kind,
                    n1: r.n1,
                    n0: r.n0,
                    reps: r.reps,
                    bias: s.bias,
                    sd: s.sd,
                    ese: s.ese,
                    cp95: s.cp95,
                    ese_b: s.ese_b,
                    cp95_b: s.cp95_b,
                    fail_count: s.fail_count,
                    true_tau: r.true_tau,
                });
            }
        }
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn scaled(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

fn scaled_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), scaled)
}

/// `Bias (SD)` on the ×100 scale, e.g. `2.1 (23.9)`.
pub fn bias_sd_cell(bias: f64, sd: Option<f64>) -> String {
    format!("{} ({})", scaled(bias), scaled_opt(sd))
}

/// Renders reports grouped by estimator. Text output is on the ×100 scale;
/// CSV keeps natural-scale values at full precision.
pub fn emit_table(reports: &[McReport], format: TableFormat) -> String {
    let rows = table_rows(reports);
    match format {
        TableFormat::Csv => {
            let mut out = String::from(TABLE_CSV_HEADER);
            out.push('\n');
            for r in &rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.case,
                    r.estimator,
                    r.n1,
                    r.n0,
                    r.reps,
                    r.bias,
                    opt(r.sd),
                    r.ese,
                    r.cp95,
                    opt(r.ese_b),
                    opt(r.cp95_b),
                    r.fail_count,
                    r.true_tau
                );
            }
            out
        }
        TableFormat::Text => render_text(&rows),
    }
}

fn render_text(rows: &[TableRow]) -> String {
    let mut n1s: Vec<usize> = rows.iter().map(|r| r.n1).collect();
    n1s.sort_unstable();
    n1s.dedup();
    let mut cases: Vec<u8> = rows.iter().map(|r| r.case).collect();
    cases.sort_unstable();
    cases.dedup();

    let widths = [16usize, 8, 7, 8, 8];
    let mut out = String::from("(values ×100)\n");
    let _ = write!(out, "{:<6}", "case");
    for n1 in &n1s {
        let _ = write!(out, " | {:<w$}", format!("n1 = {n1}"), w = widths.iter().sum::<usize>() + 4);
    }
    out.push('\n');
    let _ = write!(out, "{:<6}", "");
    for _ in &n1s {
        let _ = write!(
            out,
            " | {:>16} {:>8} {:>7} {:>8} {:>8}",
            "Bias (SD)", "ESE", "CP95", "ESE.b", "CP95.b"
        );
    }
    out.push('\n');
    for kind in EstimatorKind::ALL {
        if !rows.iter().any(|r| r.estimator == kind) {
            continue;
        }
        let _ = writeln!(out, "{kind}");
        for &case in &cases {
            if !rows.iter().any(|r| r.estimator == kind && r.case == case) {
                continue;
            }
            let _ = write!(out, "{:<6}", format!("({case})"));
            for &n1 in &n1s {
                match rows.iter().find(|r| r.estimator == kind && r.case == case && r.n1 == n1) {
                    Some(r) => {
                        let _ = write!(
                            out,
                            " | {:>16} {:>8} {:>7} {:>8} {:>8}",
                            bias_sd_cell(r.bias, r.sd),
                            scaled(r.ese),
                            scaled(r.cp95),
                            scaled_opt(r.ese_b),
                            scaled_opt(r.cp95_b)
                        );
                    }
                    None => {
                        let _ = write!(out, " | {:>16} {:>8} {:>7} {:>8} {:>8}", "", "", "", "", "");
                    }
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Parses the CSV produced by [`emit_table`]. Lines starting with `#` are skipped.
pub fn parse_table_csv(text: &str) -> Result<Vec<TableRow>, SimError> {
    let err = |line: usize, message: String| SimError::TableParse { line, message };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == TABLE_CSV_HEADER => {}
        Some((i, h)) => return Err(err(i + 1, format!("unexpected header '{h}'"))),
        None => return Err(err(0, "empty table".to_owned())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(err(line_no, format!("expected 13 fields, found {}", f.len())));
        }
        let num = |j: usize| -> Result<f64, SimError> {
            f[j].parse::<f64>()
                .map_err(|e| err(line_no, format!("field {}: {e}", j + 1)))
        };
        let opt_num = |j: usize| -> Result<Option<f64>, SimError> {
            if f[j].is_empty() {
                Ok(None)
            } else {
                num(j).map(Some)
            }
        };
        let int = |j: usize| -> Result<usize, SimError> {
            f[j].parse::<usize>()
                .map_err(|e| err(line_no, format!("field {}: {e}", j + 1)))
        };
        rows.push(TableRow {
            case: f[0].parse().map_err(|e| err(line_no, format!("case: {e}")))?,
            estimator: f[1].parse().map_err(|e: String| err(line_no, e))?,
            n1: int(2)?,
            n0: int(3)?,
            reps: int(4)?,
            bias: num(5)?,
            sd: opt_num(6)?,
            ese: num(7)?,
            cp95: num(8)?,
            ese_b: opt_num(9)?,
            cp95_b: opt_num(10)?,
            fail_count: int(11)?,
            true_tau: num(12)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_table() {
        assert!(SimCase::from_id(0).is_err());
        assert!(SimCase::from_id(17).is_err());
        let c8 = SimCase::from_id(8).unwrap();
        assert_eq!(c8.obs_x_mean, 0.0);
        assert_eq!(c8.outcome_family, OutcomeFamily::Binary);
        assert_eq!(SimCase::from_id(10).unwrap().obs_x_mean, 0.0);
        assert!(SimCase::from_id(10).unwrap().u_shift);
        assert_eq!(SimCase::from_id(5).unwrap().surrogate_x_coef, -2.0);
        assert_eq!(SimCase::from_id(11).unwrap().surrogate_x_coef, 2.0);
        assert_eq!(SimCase::from_id(6).unwrap().assignment, Assignment::ConfoundedInteraction);
        assert_eq!(SimCase::from_id(12).unwrap().assignment, Assignment::Confounded);
        assert_eq!(SimCase::from_id(14).unwrap().assignment, Assignment::CovariatesOnly);
        assert!(SimCase::from_id(14).unwrap().u_affects_y);
        for id in 1..=16 {
            let c = SimCase::from_id(id).unwrap();
            assert_eq!(c.analytic_tau().is_some(), c.outcome_family == OutcomeFamily::Continuous, "case {id}");
        }
    }

    #[test]
    fn linear_cases_have_tau_two() {
        for id in [1, 2, 3, 4, 13, 14] {
            assert_eq!(SimCase::from_id(id).unwrap().analytic_tau(), Some(2.0));
        }
    }

    #[test]
    fn discrete_support() {
        let draw = SimCase::from_id(5).unwrap().generate(50, 200, 3).unwrap();
        for u in draw.data.units() {
            assert!(u.s[0] == 0.0 || u.s[0] == 1.0);
            assert!(u.x.iter().all(|&x| x == 0.0 || x == 1.0));
        }
    }

    #[test]
    fn rct_outcomes_are_withheld() {
        let draw = SimCase::from_id(7).unwrap().generate(40, 100, 1).unwrap();
        assert_eq!(draw.rct_outcomes.len(), 40);
        assert!(draw.data.rct().all(|u| u.y.is_none()));
        assert!(draw.rct_outcomes.iter().all(|&y| y == 0.0 || y == 1.0));
    }

    #[test]
    fn text_cell_format() {
        assert_eq!(bias_sd_cell(0.021, Some(0.239)), "2.1 (23.9)");
        assert_eq!(bias_sd_cell(-0.939, None), "-93.9 (NA)");
    }

    #[test]
    fn invalid_config() {
        let mut cfg = McConfig::new(SimCase::from_id(1).unwrap(), 10, 10, 0, 1);
        assert!(cfg.validate().is_err());
        cfg.reps = 1;
        cfg.bootstrap_b = 1;
        assert!(cfg.validate().is_err());
    }
}
