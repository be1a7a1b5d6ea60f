mod common;

use common::{mean, ols};
use longfuse::analysis::Settings;
use longfuse::glm::{self, GlmSpec};
use longfuse::rng::substream;
use longfuse::simulation::{
    bias_sd_cell, emit_table, parse_table_csv, run_monte_carlo, McConfig, SimCase, SimError, TableFormat,
};
use longfuse::{EstimatorKind, OutcomeFamily, Unit};
use nalgebra::DMatrix;

fn case(id: u32) -> SimCase {
    SimCase::from_id(id).unwrap()
}

fn within(sample: &[f64], target: f64, sd: f64, k: f64) -> bool {
    (mean(sample) - target).abs() <= k * sd / (sample.len() as f64).sqrt()
}

#[test]
fn covariate_and_assignment_distributions() {
    let n = 100_000;
    for id in 1..=16 {
        let c = case(id);
        let d = c.generate(n, n, 1).unwrap().data;
        let rct: Vec<&Unit> = d.rct().collect();
        let obs: Vec<&Unit> = d.observational().collect();
        let treated = rct.iter().filter(|u| u.treated).count() as f64 / n as f64;
        assert!((treated - 0.5).abs() <= 4.0 * (0.25 / n as f64).sqrt(), "case {id}: {treated}");
        for j in 0..2 {
            let xr: Vec<f64> = rct.iter().map(|u| u.x[j]).collect();
            let xo: Vec<f64> = obs.iter().map(|u| u.x[j]).collect();
            if matches!(id, 5 | 6 | 11 | 12) {
                assert!(xr.iter().chain(&xo).all(|&v| v == 0.0 || v == 1.0));
                assert!(within(&xr, 0.5, 0.5, 4.0) && within(&xo, 0.5, 0.5, 4.0));
            } else {
                let obs_mean = if matches!(id, 8 | 10) { 0.0 } else { 1.0 };
                assert!(within(&xr, 0.0, 1.0, 4.0), "case {id}");
                assert!(within(&xo, obs_mean, 2.0, 4.0), "case {id}");
                let var = xo.iter().map(|v| (v - obs_mean).powi(2)).collect::<Vec<_>>();
                // Var((X−m)²) = 2σ⁴ for Gaussian X
                assert!(within(&var, 4.0, (2.0f64).sqrt() * 4.0, 4.0), "case {id}");
            }
        }
        if matches!(id, 5 | 6 | 11 | 12) {
            assert!(d.units().iter().all(|u| u.s[0] == 0.0 || u.s[0] == 1.0));
        }
        if c.outcome_family == OutcomeFamily::Binary {
            assert!(obs.iter().all(|u| matches!(u.y, Some(v) if v == 0.0 || v == 1.0)));
        }
    }
}

#[test]
fn linear_surrogate_equation_is_recovered() {
    // RCT S = U + 2(X1+X2) + T + e with U independent of (X,T), so U joins the noise
    let d = case(1).generate(100_000, 10, 2).unwrap().data;
    let rows: Vec<Vec<f64>> = d.rct().map(|u| vec![u.x[0], u.x[1], u.t()]).collect();
    let s: Vec<f64> = d.rct().map(|u| u.s[0]).collect();
    let (beta, se) = ols(&rows, &s);
    for (j, truth) in [(0, 0.0), (1, 2.0), (2, 2.0), (3, 1.0)] {
        assert!((beta[j] - truth).abs() < 3.0 * se[j], "coef {j}: {} ± {}", beta[j], se[j]);
    }
    // residual variance is Var(U) + Var(e) = 2
    let resid: Vec<f64> = rows
        .iter()
        .zip(&s)
        .map(|(r, s)| s - beta[0] - beta[1] * r[0] - beta[2] * r[1] - beta[3] * r[2])
        .collect();
    let v: Vec<f64> = resid.iter().map(|r| r * r).collect();
    assert!((mean(&v) - 2.0).abs() < 0.05);
}

/// Mean exchangeability: given (X,S,T) the group carries no information on Y.
#[test]
fn group_indicator_is_irrelevant_given_surrogates() {
    let n = 50_000;
    for id in 1..=12 {
        let c = case(id);
        let draw = c.generate(n, n, 3).unwrap();
        let units = draw.data.units();
        let y: Vec<f64> = draw
            .rct_outcomes
            .iter()
            .copied()
            .chain(draw.data.observational().map(|u| u.y.unwrap()))
            .collect();
        let x = DMatrix::from_fn(units.len(), 5, |i, j| {
            let u = &units[i];
            [u.x[0], u.x[1], u.s[0], u.t(), u.g()][j]
        });
        let spec = match c.outcome_family {
            OutcomeFamily::Continuous => GlmSpec::linear(),
            OutcomeFamily::Binary => GlmSpec::logistic(),
        };
        let f = glm::fit(spec, &x, &y, None).unwrap();
        let cov = f.fisher_information().try_inverse().unwrap() / units.len() as f64;
        let (coef, se) = (f.coefficients[5], cov[(5, 5)].sqrt());
        assert!(coef.abs() < 4.0 * se, "case {id}: G coefficient {coef} ± {se}");
    }
}

#[test]
fn oracle_tau_agrees_with_the_analytic_value() {
    for id in [1, 2, 3, 4, 13, 14] {
        assert_eq!(case(id).analytic_tau(), Some(2.0));
        // shared noise makes every unit's contrast exactly 2 here
        assert!((case(id).true_tau(10_000, 4) - 2.0).abs() < 1e-9, "case {id}");
    }
    for id in [5, 6] {
        let c = case(id);
        let analytic = c.analytic_tau().unwrap();
        let mut rng = substream(5, &[id as u64]);
        let diffs: Vec<f64> = (0..100_000)
            .map(|_| {
                let p = c.potential_outcomes(&mut rng);
                p.y[1] - p.y[0]
            })
            .collect();
        let sd = common::sd(&diffs);
        assert!(within(&diffs, analytic, sd, 4.0), "case {id}: {} vs {analytic}", mean(&diffs));
    }
}

#[test]
fn binary_oracle_is_self_consistent() {
    let c = case(7);
    assert_eq!(c.analytic_tau(), None);
    let a = c.true_tau(100_000, 6);
    let b = c.true_tau(100_000, 7);
    // each unit's contrast lies in [−1, 1]
    let se = (2.0f64 / 100_000.0).sqrt();
    assert!((a - b).abs() < 3.0 * se, "{a} vs {b}");
    assert_ne!(a, b);
}

#[test]
fn generation_is_seed_deterministic() {
    for id in [1, 5, 7, 13] {
        let a = case(id).generate(100, 200, 8).unwrap();
        let b = case(id).generate(100, 200, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data, case(id).generate(100, 200, 9).unwrap().data);
    }
}

fn small_cfg(reps: usize) -> McConfig {
    let mut cfg = McConfig::new(case(1), 60, 150, reps, 10);
    cfg.oracle_n = 1000;
    cfg
}

#[test]
fn monte_carlo_is_schedule_independent() {
    let cfg = small_cfg(24);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_monte_carlo(&cfg).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(emit_table(&[one.clone()], TableFormat::Csv), emit_table(&[run(2)], TableFormat::Csv));
    for s in &one.estimators {
        assert!((0.0..=1.0).contains(&s.cp95));
        assert!(s.sd.unwrap() >= 0.0 && s.ese >= 0.0);
    }
}

#[test]
fn single_replicate_has_no_sd() {
    let r = run_monte_carlo(&small_cfg(1)).unwrap();
    assert!(r.estimators.iter().all(|s| s.sd.is_none()));
    assert!(emit_table(&[r], TableFormat::Text).contains("(NA)"));
}

#[test]
fn failing_estimator_beyond_the_limit_is_an_error() {
    let mut cfg = small_cfg(10);
    cfg.settings = Settings::default();
    cfg.estimators = vec![EstimatorKind::IpwTrue];
    match run_monte_carlo(&cfg) {
        Err(SimError::TooManyFailures { failed, reps, .. }) => assert_eq!((failed, reps), (10, 10)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn table_formatting_and_csv_round_trip() {
    assert_eq!(bias_sd_cell(0.021, Some(0.239)), "2.1 (23.9)");
    assert_eq!(bias_sd_cell(-0.939, Some(1.07)), "-93.9 (107.0)");
    let mut cfg = small_cfg(12);
    cfg.bootstrap_b = 4;
    let report = run_monte_carlo(&cfg).unwrap();
    let csv = emit_table(&[report.clone()], TableFormat::Csv);
    let rows = parse_table_csv(&csv).unwrap();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        let s = report.summary(row.estimator).unwrap();
        assert!((row.bias - s.bias).abs() <= 1e-12);
        assert!((row.ese_b.unwrap() - s.ese_b.unwrap()).abs() <= 1e-12);
        assert_eq!(row.sd, s.sd);
    }
    let text = emit_table(&[report], TableFormat::Text);
    assert!(text.contains("Bias (SD)") && text.contains("ESE.b"));
    assert!(parse_table_csv("bogus\n").is_err());
}
