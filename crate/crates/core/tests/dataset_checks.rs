mod common;

use common::draw;
use longfuse::dataset::{load_csv, overlap_diagnostics, write_csv, CsvSchema};
use longfuse::{FusedDataset, Group, OutcomeFamily, Unit};

#[test]
fn generated_fixture_round_trips_through_csv() {
    let data = draw(7, 60, 600, 1);
    let mut bytes = Vec::new();
    write_csv(&data, &mut bytes).unwrap();
    let text = String::from_utf8(bytes).unwrap();
    // header plus one line per unit
    assert_eq!(text.lines().count(), 661);
    let file = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(file.path(), &text).unwrap();
    let loaded = load_csv(file.path(), &CsvSchema::default(), None).unwrap();
    assert_eq!((loaded.n1(), loaded.n0()), (60, 600));
    assert_eq!(loaded.outcome_family(), OutcomeFamily::Binary);
    assert_eq!(loaded, data);

    let cont = draw(1, 20, 40, 2);
    let mut bytes = Vec::new();
    write_csv(&cont, &mut bytes).unwrap();
    std::fs::write(file.path(), &bytes).unwrap();
    let again = load_csv(file.path(), &CsvSchema::default(), None).unwrap();
    for (a, b) in again.units().iter().zip(cont.units()) {
        assert_eq!(a.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.y.map(f64::to_bits), b.y.map(f64::to_bits));
    }
}

#[test]
fn randomized_trial_shows_no_overlap_problem() {
    let data = draw(1, 200, 500, 3);
    let before = data.clone();
    let report = overlap_diagnostics(&data, 0.05).unwrap();
    assert_eq!(data, before);
    assert!(!report.rct_propensity.violated);
    let (lo, hi) = (report.rct_propensity.min.unwrap(), report.rct_propensity.max.unwrap());
    assert!(lo > 0.2 && hi < 0.8, "{lo} {hi}");
    let strict = overlap_diagnostics(&data, 0.01).unwrap();
    assert!(strict.obs_membership.min.unwrap() > 0.01);
    assert!(!strict.any_failure());
}

#[test]
fn deterministic_observational_assignment_is_reported_not_fatal() {
    let mut units = Vec::new();
    for i in 0..40 {
        let x = i as f64 / 10.0 - 2.0;
        let group = if i % 2 == 0 { Group::Rct } else { Group::Observational };
        let treated = match group {
            Group::Rct => i % 4 == 0,
            Group::Observational => x > 0.0,
        };
        units.push(Unit {
            group,
            treated,
            x: vec![x],
            s: vec![(i as f64).sin()],
            y: (group == Group::Observational).then_some(x),
        });
    }
    let data = FusedDataset::new(units, None).unwrap();
    let report = overlap_diagnostics(&data, 0.05).unwrap();
    let err = report.obs_propensity.error.as_deref().unwrap();
    assert!(err.contains("separation"), "{err}");
    assert!(report.any_failure());
    assert!(report.rct_propensity.error.is_none());
}
