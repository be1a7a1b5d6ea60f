use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use longfuse::design::Encoding;
use longfuse::inference::PropensityInformation;
use longfuse::nuisance::SelectionForm;
use longfuse::{EstimatorKind, OutcomeFamily, VarianceMethod};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "longfuse", version, about = "Long-term treatment effects from a short-term RCT fused with observational data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads for bootstrap and Monte Carlo loops (results do not depend on it).
    #[arg(long, global = true, env = "LONGFUSE_THREADS")]
    pub threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the long-term ATE on user data.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study for one of the built-in cases.
    Simulate(SimulateArgs),
    /// Re-run a command from the manifest embedded in one of its output files.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorChoice {
    All,
    IpwTrue,
    /// IPW with an estimated RCT propensity.
    Ipw,
    Dr,
    SurrogateIndex,
}

impl EstimatorChoice {
    pub fn kinds(self) -> Vec<EstimatorKind> {
        match self {
            EstimatorChoice::All => EstimatorKind::ALL.to_vec(),
            EstimatorChoice::IpwTrue => vec![EstimatorKind::IpwTrue],
            EstimatorChoice::Ipw => vec![EstimatorKind::IpwEst],
            EstimatorChoice::Dr => vec![EstimatorKind::Dr],
            EstimatorChoice::SurrogateIndex => vec![EstimatorKind::SurrogateIndex],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyChoice {
    /// Binary if every observed outcome is 0/1, continuous otherwise.
    Auto,
    Continuous,
    Binary,
}

impl FamilyChoice {
    pub fn family(self) -> Option<OutcomeFamily> {
        match self {
            FamilyChoice::Auto => None,
            FamilyChoice::Continuous => Some(OutcomeFamily::Continuous),
            FamilyChoice::Binary => Some(OutcomeFamily::Binary),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceChoice {
    Plugin,
    Bootstrap,
    None,
}

impl From<VarianceChoice> for VarianceMethod {
    fn from(v: VarianceChoice) -> Self {
        match v {
            VarianceChoice::Plugin => VarianceMethod::Plugin,
            VarianceChoice::Bootstrap => VarianceMethod::Bootstrap,
            VarianceChoice::None => VarianceMethod::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingChoice {
    Additive,
    /// All interactions of the inputs; meant for discrete X and S.
    Saturated,
}

impl From<EncodingChoice> for Encoding {
    fn from(e: EncodingChoice) -> Self {
        match e {
            EncodingChoice::Additive => Encoding::Additive,
            EncodingChoice::Saturated => Encoding::Saturated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionChoice {
    /// One model on (X,S,T) over all units.
    Shared,
    /// Separate models on (X,S) within each arm.
    PerArm,
}

impl From<SelectionChoice> for SelectionForm {
    fn from(s: SelectionChoice) -> Self {
        match s {
            SelectionChoice::Shared => SelectionForm::Shared,
            SelectionChoice::PerArm => SelectionForm::PerArm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InformationChoice {
    /// Outer product of the propensity score.
    Empirical,
    /// Model-based e(1-e) weighting.
    Expected,
}

impl From<InformationChoice> for PropensityInformation {
    fn from(i: InformationChoice) -> Self {
        match i {
            InformationChoice::Empirical => PropensityInformation::Empirical,
            InformationChoice::Expected => PropensityInformation::Expected,
        }
    }
}

/// Model options shared by `estimate` and `simulate`.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Regressor encoding for every nuisance model.
    #[arg(long, value_enum, default_value_t = EncodingChoice::Additive)]
    pub encoding: EncodingChoice,

    /// Regress the pseudo-outcome mu_t(S,X) on X within RCT arm t only.
    #[arg(long)]
    pub mu_x_arm_only: bool,

    /// Parameterization of the selection models g_t(S,X).
    #[arg(long, value_enum, default_value_t = SelectionChoice::Shared)]
    pub selection: SelectionChoice,

    /// Propensity information estimate used by the estimated-propensity IPW variance.
    #[arg(long, value_enum, default_value_t = InformationChoice::Empirical)]
    pub propensity_information: InformationChoice,

    /// Clip fitted propensities into [trim, 1 - trim].
    #[arg(long)]
    pub trim: Option<f64>,

    /// Significance level of the reported intervals.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    /// Fused CSV with a group column.
    #[arg(long, conflicts_with_all = ["rct", "obs"], required_unless_present_all = ["rct", "obs"])]
    pub data: Option<PathBuf>,

    /// RCT CSV (outcome column optional).
    #[arg(long, requires = "obs")]
    pub rct: Option<PathBuf>,

    /// Observational CSV.
    #[arg(long, requires = "rct")]
    pub obs: Option<PathBuf>,

    /// Group column (1 = RCT, 0 = observational).
    #[arg(long, default_value = "g")]
    pub col_g: String,

    /// Treatment column (0/1).
    #[arg(long, default_value = "t")]
    pub col_t: String,

    /// Long-term outcome column, empty on RCT rows.
    #[arg(long, default_value = "y")]
    pub col_y: String,

    /// Surrogate columns, comma separated [default: every s<j> column].
    #[arg(long, value_delimiter = ',')]
    pub cols_s: Option<Vec<String>>,

    /// Covariate columns, comma separated [default: every x<j> column].
    #[arg(long, value_delimiter = ',')]
    pub cols_x: Option<Vec<String>>,

    /// Outcome family.
    #[arg(long, value_enum, default_value_t = FamilyChoice::Auto)]
    pub family: FamilyChoice,

    /// Estimator to report.
    #[arg(long, value_enum, default_value_t = EstimatorChoice::All)]
    pub estimator: EstimatorChoice,

    /// Column holding the known RCT propensity (read from --data or --rct).
    #[arg(long, conflicts_with = "propensity_const")]
    pub propensity_col: Option<String>,

    /// Known RCT propensity shared by every unit.
    #[arg(long)]
    pub propensity_const: Option<f64>,

    /// Standard error method.
    #[arg(long, value_enum, default_value_t = VarianceChoice::Plugin)]
    pub variance: VarianceChoice,

    /// Bootstrap resamples.
    #[arg(long, default_value_t = 200)]
    pub bootstrap_b: usize,

    /// Seed for the bootstrap.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,

    /// Overlap margin for the diagnostics.
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Write JSON results here (a timing sidecar goes to <out>.manifest.json).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Print JSON instead of the text table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Case number, 1 to 16.
    #[arg(long)]
    pub case: u32,

    /// RCT sample size per replicate.
    #[arg(long, default_value_t = 200)]
    pub n1: usize,

    /// Observational sample size per replicate.
    #[arg(long, default_value_t = 500)]
    pub n0: usize,

    /// Monte Carlo replicates.
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,

    /// Master seed; replicate streams derive from it.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,

    /// Bootstrap resamples per replicate (0 = none).
    #[arg(long, default_value_t = 0)]
    pub bootstrap_b: usize,

    /// Estimators to run, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
    pub estimators: Vec<EstimatorChoice>,

    /// Known RCT propensity used by ipw-true and the surrogate index.
    #[arg(long, default_value_t = 0.5)]
    pub propensity_const: f64,

    /// Draws for the Monte Carlo truth of cases without a closed form.
    #[arg(long, default_value_t = longfuse::simulation::DEFAULT_ORACLE_N)]
    pub oracle_n: usize,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Output prefix: writes <out>.csv, <out>.txt and <out>.manifest.json.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Run even when replicates x resamples x estimators exceeds 10^7 refits.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// An output file (JSON, CSV or text) or a manifest sidecar.
    pub source: PathBuf,

    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Compare the regenerated output with the recorded file instead of writing.
    #[arg(long)]
    pub check: bool,
}
