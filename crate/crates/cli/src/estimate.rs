use std::fmt::Write as _;
use std::path::Path;

use longfuse::analysis::{self, AnalysisError, Settings};
use longfuse::dataset::{self, CsvSchema, DataError, FusedDataset, OverlapReport};
use longfuse::nuisance::{KnownPropensity, NuisanceOptions};
use longfuse::{OutcomeFamily, TauEstimate, VarianceMethod};
use serde::Serialize;

use crate::args::{EstimateArgs, ModelArgs};
use crate::manifest::RunManifest;
use crate::{Failure, Rendered};

#[derive(Serialize)]
struct EstimateOutput<'a> {
    manifest: &'a RunManifest,
    n1: usize,
    n0: usize,
    outcome_family: OutcomeFamily,
    overlap: &'a OverlapReport,
    estimates: &'a [TauEstimate],
}

pub fn settings(model: &ModelArgs) -> Result<Settings, Failure> {
    if !(model.alpha > 0.0 && model.alpha < 1.0) {
        return Err(Failure::usage(format!("--alpha must lie in (0,1), got {}", model.alpha)));
    }
    if let Some(t) = model.trim {
        if !(t > 0.0 && t < 0.5) {
            return Err(Failure::usage(format!("--trim must lie in (0,0.5), got {t}")));
        }
    }
    Ok(Settings {
        nuisance: NuisanceOptions {
            encoding: model.encoding.into(),
            mu_x_arm_only: model.mu_x_arm_only,
            selection_form: model.selection.into(),
            ..NuisanceOptions::default()
        },
        known_propensity: None,
        trim: model.trim,
        alpha: model.alpha,
        propensity_information: model.propensity_information.into(),
    })
}

fn data_failure(e: DataError) -> Failure {
    Failure::usage(e.to_string())
}

fn analysis_failure(kind: longfuse::EstimatorKind, e: AnalysisError) -> Failure {
    let msg = format!("{kind}: {e}");
    if e.is_usage() {
        Failure::usage(msg)
    } else {
        Failure::numerical(msg)
    }
}

fn inputs(args: &EstimateArgs) -> Vec<&Path> {
    [&args.data, &args.rct, &args.obs]
        .into_iter()
        .filter_map(|p| p.as_deref())
        .collect()
}

fn load(args: &EstimateArgs) -> Result<FusedDataset, Failure> {
    let schema = CsvSchema {
        g: args.col_g.clone(),
        t: args.col_t.clone(),
        y: args.col_y.clone(),
        s: args.cols_s.clone(),
        x: args.cols_x.clone(),
    };
    let family = args.family.family();
    match (&args.data, &args.rct, &args.obs) {
        (Some(data), _, _) => dataset::load_csv(data, &schema, family).map_err(data_failure),
        (None, Some(rct), Some(obs)) => dataset::load_split_csv(rct, obs, &schema, family).map_err(data_failure),
        _ => Err(Failure::usage("give either --data or both --rct and --obs")),
    }
}

fn known_propensity(args: &EstimateArgs, data: &FusedDataset) -> Result<Option<KnownPropensity>, Failure> {
    if let Some(p) = args.propensity_const {
        return Ok(Some(KnownPropensity::Constant(p)));
    }
    let Some(col) = &args.propensity_col else {
        return Ok(None);
    };
    let source = args.data.as_ref().or(args.rct.as_ref()).expect("an input file is present");
    let mut values = dataset::load_column(source, col).map_err(data_failure)?;
    if args.data.is_none() {
        values.resize(data.len(), None);
    }
    Ok(Some(KnownPropensity::PerUnit(values)))
}

pub fn manifest(args: &EstimateArgs) -> Result<RunManifest, Failure> {
    RunManifest::new("estimate", args, args.seed, &inputs(args))
}

pub fn run(args: &EstimateArgs, manifest: &RunManifest) -> Result<Rendered, Failure> {
    let mut s = settings(&args.model)?;
    let variance: VarianceMethod = args.variance.into();
    if variance == VarianceMethod::Bootstrap && args.bootstrap_b < 2 {
        return Err(Failure::usage("--bootstrap-b must be at least 2"));
    }
    if !(args.epsilon > 0.0 && args.epsilon < 0.5) {
        return Err(Failure::usage(format!("--epsilon must lie in (0,0.5), got {}", args.epsilon)));
    }
    let kinds = args.estimator.kinds();
    if kinds.contains(&longfuse::EstimatorKind::IpwTrue)
        && args.propensity_col.is_none()
        && args.propensity_const.is_none()
    {
        return Err(Failure::usage(
            "ipw_true needs the known RCT propensity: pass --propensity-col or --propensity-const",
        ));
    }

    let data = load(args)?;
    s.known_propensity = known_propensity(args, &data)?;
    let overlap = dataset::overlap_diagnostics(&data, args.epsilon).map_err(data_failure)?;
    if overlap.any_violation() {
        log::warn!("overlap diagnostics flag fitted probabilities outside [{0}, 1 - {0}]", args.epsilon);
    }

    let mut estimates = Vec::with_capacity(kinds.len());
    for kind in kinds {
        log::info!("fitting {kind}");
        let mut est = analysis::analyze(kind, &data, &s, variance, args.bootstrap_b, args.seed)
            .map_err(|e| analysis_failure(kind, e))?;
        est.diagnostics = Some(overlap.clone());
        estimates.push(est);
    }

    let output = EstimateOutput {
        manifest,
        n1: data.n1(),
        n0: data.n0(),
        outcome_family: data.outcome_family(),
        overlap: &overlap,
        estimates: &estimates,
    };
    let json = serde_json::to_string_pretty(&output).expect("results serialize") + "\n";
    let stdout = if args.json {
        json.clone()
    } else {
        text_table(&estimates, data.n1(), data.n0(), s.alpha)
    };
    let files = args.out.iter().map(|p| (p.clone(), json.clone())).collect();
    Ok(Rendered {
        files,
        stdout,
        sidecar_base: args.out.clone(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |v| format!("{v:.4}"))
}

fn text_table(estimates: &[TauEstimate], n1: usize, n0: usize, alpha: f64) -> String {
    let mut out = String::new();
    let level = (1.0 - alpha) * 100.0;
    let _ = writeln!(out, "n1 = {n1}, n0 = {n0}; {level}% Wald intervals");
    let _ = writeln!(
        out,
        "{:<16} {:>10} {:>10} {:>10} {:>10} {:>10}  variance",
        "estimator", "tau_hat", "se", "ci_low", "ci_high", "p_value"
    );
    for e in estimates {
        let method = match e.variance_method {
            VarianceMethod::Plugin => "plugin",
            VarianceMethod::Bootstrap => "bootstrap",
            VarianceMethod::None => "none",
        };
        let _ = writeln!(
            out,
            "{:<16} {:>10.4} {:>10} {:>10} {:>10} {:>10}  {method}",
            e.estimator.name(),
            e.tau_hat,
            cell(e.se),
            cell(e.ci_low()),
            cell(e.ci_high()),
            cell(e.p_value),
        );
    }
    out
}
