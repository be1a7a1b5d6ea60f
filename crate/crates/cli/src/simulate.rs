use std::path::{Path, PathBuf};

use longfuse::nuisance::KnownPropensity;
use longfuse::simulation::{self, McConfig, SimCase, SimError, TableFormat};
use longfuse::EstimatorKind;

use crate::args::SimulateArgs;
use crate::estimate::settings;
use crate::manifest::RunManifest;
use crate::{Failure, Rendered};

/// Refit budget above which `--force` is required.
pub const MAX_REFITS: u128 = 10_000_000;

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::UnknownCase(_) | SimError::InvalidConfig(_) | SimError::TableParse { .. } => {
            Failure::usage(e.to_string())
        }
        SimError::Data(_) | SimError::TooManyFailures { .. } => Failure::numerical(e.to_string()),
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// The CSV and text tables written for output prefix `prefix`.
pub fn paths(prefix: &Path) -> Vec<PathBuf> {
    vec![with_suffix(prefix, ".csv"), with_suffix(prefix, ".txt")]
}

pub fn estimators(args: &SimulateArgs) -> Vec<EstimatorKind> {
    let mut kinds: Vec<EstimatorKind> = args.estimators.iter().flat_map(|c| c.kinds()).collect();
    kinds.sort();
    kinds.dedup();
    kinds
}

pub fn manifest(args: &SimulateArgs) -> Result<RunManifest, Failure> {
    RunManifest::new("simulate", args, args.seed, &[])
}

pub fn run(args: &SimulateArgs, manifest: &RunManifest) -> Result<Rendered, Failure> {
    let case = SimCase::from_id(args.case).map_err(sim_failure)?;
    let kinds = estimators(args);
    let refits = args.reps as u128 * args.bootstrap_b as u128 * kinds.len() as u128;
    if refits > MAX_REFITS && !args.force {
        return Err(Failure::usage(format!(
            "{} replicates x {} resamples x {} estimators = {refits} bootstrap refits exceeds {MAX_REFITS}; pass --force to run anyway",
            args.reps,
            args.bootstrap_b,
            kinds.len()
        )));
    }
    let mut s = settings(&args.model)?;
    s.known_propensity = Some(KnownPropensity::Constant(args.propensity_const));
    let mut cfg = McConfig::new(case, args.n1, args.n0, args.reps, args.seed);
    cfg.bootstrap_b = args.bootstrap_b;
    cfg.estimators = kinds;
    cfg.settings = s;
    cfg.oracle_n = args.oracle_n;

    let report = simulation::run_monte_carlo(&cfg).map_err(sim_failure)?;
    for e in &report.estimators {
        if e.fail_count > 0 {
            log::warn!("{}: {} of {} replicates failed", e.estimator, e.fail_count, args.reps);
        }
    }
    let reports = [report];
    let text = simulation::emit_table(&reports, TableFormat::Text);
    let csv = simulation::emit_table(&reports, TableFormat::Csv);
    let header = manifest.comment_lines();
    let files = match &args.out {
        Some(prefix) => paths(prefix)
            .into_iter()
            .zip([format!("{header}{csv}"), format!("{header}{text}")])
            .collect(),
        None => Vec::new(),
    };
    Ok(Rendered {
        files,
        stdout: text,
        sidecar_base: args.out.clone(),
    })
}
