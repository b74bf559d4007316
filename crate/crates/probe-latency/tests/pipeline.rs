//! End-to-end runs through the library API: generate a pair with a known
//! injected delay, push it through preparation and estimation, and check
//! that the known delay comes back out.

use std::collections::BTreeMap;

use probe_latency::types::Period;
use probe_latency::{
    generate_pair, run_episode, run_episodes, summarize, AnalysisSettings, Episode, MinuteStamp,
    SyntheticSpec,
};

fn spec(
    segment_id: &str,
    start_min: i64,
    slowdown: i64,
    recovery: i64,
    seed: u64,
) -> SyntheticSpec {
    SyntheticSpec {
        segment_id: segment_id.into(),
        start: MinuteStamp::from_minutes(start_min),
        inject_slowdown_min: slowdown,
        inject_recovery_min: recovery,
        seed,
        ..SyntheticSpec::default()
    }
}

#[test]
fn noiseless_uniform_delay_recovered_exactly() {
    let settings = AnalysisSettings::default();
    for k in [0, 3, 7, 12, 15] {
        let pair = generate_pair(&spec("E2E", 0, k, k, 1)).unwrap();
        let report =
            run_episode(&pair.reference, &pair.probe, &pair.truth.episode, &settings).unwrap();
        for est in [&report.full, &report.slowdown, &report.recovery] {
            assert_eq!(est.best_offset_avd, k, "avd at k={k}");
            assert_eq!(est.best_offset_svd, k, "svd at k={k}");
            assert_eq!(est.best_offset_cor, k, "cor at k={k}");
            assert_eq!(est.average_latency, k as f64);
        }
    }
}

#[test]
fn noiseless_split_delay_recovered_per_phase() {
    let settings = AnalysisSettings::default();
    let pair = generate_pair(&spec("E2E", 0, 3, 5, 1)).unwrap();
    let report = run_episode(&pair.reference, &pair.probe, &pair.truth.episode, &settings).unwrap();
    assert_eq!(report.slowdown.best_offset_avd, 3);
    assert_eq!(report.slowdown.best_offset_svd, 3);
    assert_eq!(report.slowdown.best_offset_cor, 3);
    assert_eq!(report.recovery.best_offset_avd, 5);
    assert_eq!(report.recovery.best_offset_svd, 5);
    assert_eq!(report.recovery.best_offset_cor, 5);
    assert!(report.slowdown.average_latency < report.recovery.average_latency);
}

#[test]
fn noisy_estimates_stay_near_truth() {
    // A modest noise level should nudge the estimate by at most a minute.
    // The tight statistical claim lives with the estimator's own tests; this
    // checks the full prepare-and-estimate chain does not amplify noise.
    let settings = AnalysisSettings::default();
    for seed in 0..10u64 {
        let mut s = spec("E2E", 0, 5, 5, seed);
        s.noise_sigma_mph = 2.0;
        let pair = generate_pair(&s).unwrap();
        let report =
            run_episode(&pair.reference, &pair.probe, &pair.truth.episode, &settings).unwrap();
        let err = report.full.average_latency - 5.0;
        assert!(
            err.abs() <= 1.0,
            "seed {seed}: full-window estimate {} strays from 5 by more than a minute",
            report.full.average_latency
        );
    }
}

#[test]
fn batch_and_summary_agree_with_truth() {
    // Two segments, one episode each, different injected delays. The batch
    // keeps input order, nothing is skipped, and the summary tables carry
    // the exact injected values through to the per-segment rows.
    let am = spec("AA", 7 * 60, 2, 2, 11);
    let pm = spec("BB", 14 * 60, 6, 6, 12);

    let mut series = BTreeMap::new();
    let mut episodes = Vec::new();
    for s in [&am, &pm] {
        let pair = generate_pair(s).unwrap();
        episodes.push(pair.truth.episode.clone());
        series.insert(s.segment_id.clone(), (pair.reference, pair.probe));
    }

    let outcome = run_episodes(&series, &episodes, &AnalysisSettings::default()).unwrap();
    assert!(outcome.skipped.is_empty(), "skipped: {:?}", outcome.skipped);
    assert_eq!(outcome.reports.len(), 2);
    assert_eq!(outcome.reports[0].segment_id, "AA");
    assert_eq!(outcome.reports[0].period, Period::Am);
    assert_eq!(outcome.reports[0].full.average_latency, 2.0);
    assert_eq!(outcome.reports[1].segment_id, "BB");
    assert_eq!(outcome.reports[1].period, Period::Pm);
    assert_eq!(outcome.reports[1].full.average_latency, 6.0);

    let lengths: BTreeMap<String, f64> = [("AA".to_string(), 1.5)].into_iter().collect();
    let summary = summarize(&outcome.reports, &lengths).unwrap();

    assert_eq!(summary.overall.n, 2);
    assert_eq!(summary.overall.mean_average, 4.0);
    assert_eq!(summary.by_period.len(), 2);
    assert_eq!(summary.by_period[0].0, Period::Am);
    assert_eq!(summary.by_period[0].1.mean_average, 2.0);
    assert_eq!(summary.by_period[1].0, Period::Pm);
    assert_eq!(summary.by_period[1].1.mean_average, 6.0);

    assert_eq!(summary.by_segment.len(), 2);
    assert_eq!(summary.by_segment[0].0, "AA");
    assert_eq!(summary.by_segment[0].1, Some(1.5));
    assert_eq!(summary.by_segment[1].1, None);

    // Uniform injection: each phase row matches its period's full-window row.
    for (period, phase, row) in &summary.by_phase {
        let expected = match period {
            Some(Period::Am) => 2.0,
            Some(Period::Pm) => 6.0,
            None => 4.0,
            other => panic!("unexpected period bucket {other:?} for phase {phase}"),
        };
        assert_eq!(row.mean_average, expected, "{period:?}/{phase}");
    }

    assert_eq!(summary.distribution.p95_min, 6);
    let counts: Vec<(i64, usize)> = summary
        .distribution
        .bins
        .iter()
        .map(|b| (b.latency_min, b.count))
        .collect();
    assert_eq!(counts, vec![(2, 1), (6, 1)]);
}

#[test]
fn missing_segment_is_skipped_not_fatal() {
    let s = spec("AA", 0, 2, 2, 3);
    let pair = generate_pair(&s).unwrap();
    let mut orphan = pair.truth.episode.clone();
    orphan.segment_id = "ZZ".into();
    let episodes = vec![pair.truth.episode.clone(), orphan];
    let mut series = BTreeMap::new();
    series.insert("AA".to_string(), (pair.reference, pair.probe));

    let outcome = run_episodes(&series, &episodes, &AnalysisSettings::default()).unwrap();
    assert_eq!(outcome.reports.len(), 1);
    assert_eq!(outcome.skipped.len(), 1);
    assert!(outcome.skipped[0].reason.contains("ZZ"));
}

#[test]
fn operator_transition_overrides_detection() {
    // When the episode arrives with a transition minute, that minute splits
    // the phases even if the curve's own minimum sits elsewhere.
    let s = spec("E2E", 0, 4, 4, 1);
    let pair = generate_pair(&s).unwrap();
    let detected = pair.truth.transition;
    let forced = MinuteStamp::from_minutes(detected.as_minutes() + 5);
    let episode = Episode {
        transition: Some(forced),
        ..pair.truth.episode.clone()
    };
    let report = run_episode(
        &pair.reference,
        &pair.probe,
        &episode,
        &AnalysisSettings::default(),
    )
    .unwrap();
    assert_eq!(report.transition, forced);
    // The delay is uniform, so moving the split does not move the estimates.
    assert_eq!(report.slowdown.average_latency, 4.0);
    assert_eq!(report.recovery.average_latency, 4.0);
}
