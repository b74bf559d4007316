//! Acceptance suite: one test per release criterion, each printing its own
//! pass/fail line. Criteria with a stated time budget assert it; criteria
//! with a stated tolerance pin it exactly as stated.
//!
//! Run with `cargo test -p probe-latency-cli --test acceptance`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use probe_latency::episode::Phase;
use probe_latency::ingest::{SegmentDefinition, TravelTimeObservation};
use probe_latency::series::{aggregate_intervals, filter_sigma, IntervalSample};
use probe_latency::smoothing::interpolate_gaps;
use probe_latency::types::SeriesSource;
use probe_latency::{
    compose_probe_series, estimate_latency, generate_pair, run_episode, smooth_forward,
    smooth_zero_phase, summarize, AnalysisSettings, Error, GapPolicy, MinuteRange, MinuteStamp,
    ShiftBounds, SmoothingKernel, SpeedSeries, SyntheticSpec, TmcMapping, TmcPiece,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn series(id: &str, source: SeriesSource, start: i64, values: Vec<Option<f64>>) -> SpeedSeries {
    SpeedSeries::new(id, source, MinuteStamp::from_minutes(start), values).unwrap()
}

/// Criterion 1: a probe that is literally the reference delayed by k minutes
/// must score best at offset k under all three objectives, exactly, for
/// every k in the search range. Budget: under a second for all sixteen.
#[test]
fn c01_noiseless_shift_recovery_exact_for_k_0_to_15() {
    let started = Instant::now();

    let profile = probe_latency::synthetic::base_profile(&SyntheticSpec {
        total_min: 300,
        ..SyntheticSpec::default()
    });
    let bounds = ShiftBounds::new(0, 15).unwrap();
    let window = MinuteRange::new(
        MinuteStamp::from_minutes(30),
        MinuteStamp::from_minutes(270),
    )
    .unwrap();
    let reference = series(
        "C1",
        SeriesSource::Reference,
        30,
        profile[30..270].iter().copied().map(Some).collect(),
    );

    for k in 0..=15i64 {
        // probe(t) = reference(t - k): the feed reports each change k minutes
        // after the reference saw it.
        let probe = series(
            "C1",
            SeriesSource::Probe,
            k,
            profile.iter().copied().map(Some).collect(),
        );
        let est = estimate_latency(&reference, &probe, bounds, window).unwrap();
        assert_eq!(est.best_offset_avd, k, "avd offset at k={k}");
        assert_eq!(est.best_offset_svd, k, "svd offset at k={k}");
        assert_eq!(est.best_offset_cor, k, "cor offset at k={k}");
        assert_eq!(est.average_latency, k as f64, "average at k={k}");
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(1),
        "took {elapsed:?}, budget 1 s"
    );
}

/// Criterion 2: with Gaussian noise of 2 mph on a 65/25 trapezoid, at least
/// 95% of 100 seeded trials per injected delay land within one minute of the
/// truth, separately for each objective. Budget: under 30 s.
#[test]
fn c02_noisy_shift_recovery_within_one_minute() {
    let started = Instant::now();
    let settings = AnalysisSettings::default();

    for k in [2i64, 5, 8] {
        let mut hits = [0u32; 3];
        const TRIALS: u32 = 100;
        for trial in 0..TRIALS {
            let spec = SyntheticSpec {
                segment_id: "C2".into(),
                freeflow_mph: 65.0,
                trough_mph: 25.0,
                inject_slowdown_min: k,
                inject_recovery_min: k,
                noise_sigma_mph: 2.0,
                seed: 1_000 * k as u64 + trial as u64,
                ..SyntheticSpec::default()
            };
            let pair = generate_pair(&spec).unwrap();
            let report =
                run_episode(&pair.reference, &pair.probe, &pair.truth.episode, &settings).unwrap();
            let offsets = [
                report.full.best_offset_avd,
                report.full.best_offset_svd,
                report.full.best_offset_cor,
            ];
            for (hit, offset) in hits.iter_mut().zip(offsets) {
                if (offset - k).abs() <= 1 {
                    *hit += 1;
                }
            }
        }
        for (name, hit) in ["avd", "svd", "cor"].iter().zip(hits) {
            assert!(
                hit >= 95,
                "k={k}: {name} within +/-1 min in only {hit}/{TRIALS} trials, need 95"
            );
        }
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(30),
        "took {elapsed:?}, budget 30 s"
    );
}

/// Criterion 3: injecting 3 minutes into the slowdown and 5 into the
/// recovery, noiselessly, yields phase estimates of exactly 3 and 5 and a
/// summary whose slowdown mean sits below its recovery mean.
#[test]
fn c03_asymmetric_injection_recovered_per_phase() {
    let spec = SyntheticSpec {
        segment_id: "C3".into(),
        inject_slowdown_min: 3,
        inject_recovery_min: 5,
        noise_sigma_mph: 0.0,
        ..SyntheticSpec::default()
    };
    let pair = generate_pair(&spec).unwrap();
    let report = run_episode(
        &pair.reference,
        &pair.probe,
        &pair.truth.episode,
        &AnalysisSettings::default(),
    )
    .unwrap();

    assert_eq!(report.slowdown.best_offset_avd, 3);
    assert_eq!(report.slowdown.best_offset_svd, 3);
    assert_eq!(report.slowdown.best_offset_cor, 3);
    assert_eq!(report.recovery.best_offset_avd, 5);
    assert_eq!(report.recovery.best_offset_svd, 5);
    assert_eq!(report.recovery.best_offset_cor, 5);

    let summary = summarize(std::slice::from_ref(&report), &BTreeMap::new()).unwrap();
    let phase_mean = |phase: Phase| {
        summary
            .by_phase
            .iter()
            .find(|(period, p, _)| period.is_none() && *p == phase)
            .map(|(_, _, row)| row.mean_average)
            .expect("overall phase row")
    };
    assert!(phase_mean(Phase::Slowdown) < phase_mean(Phase::Recovery));
}

/// Criterion 4: the 1.5-sigma filter applied to 10,000 standard-normal
/// speeds keeps 86.6% of them, within one percentage point.
#[test]
fn c04_sigma_filter_retention_matches_normal_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let speeds_mph: Vec<f64> = (0..10_000)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let sample = IntervalSample {
        minute: MinuteStamp::from_minutes(0),
        speeds_mph,
    };

    let kept = filter_sigma(&sample, 1.5).speeds_mph.len();
    let retention = kept as f64 / 10_000.0;
    assert!(
        (retention - 0.866).abs() <= 0.010,
        "retention {retention:.4} outside 0.866 +/- 0.010"
    );
}

/// Criterion 5: on symmetric pulses, zero-phase smoothing never moves the
/// peak (50 of 50 seeded cases) while a single forward pass drags it at
/// least a minute late in at least 45 of the 50.
#[test]
fn c05_zero_phase_keeps_peak_forward_pass_drags_it() {
    fn argmax(s: &SpeedSeries) -> i64 {
        let mut best = (s.start(), f64::NEG_INFINITY);
        for (m, v) in s.iter_minutes() {
            let v = v.expect("gap-free series");
            if v > best.1 {
                best = (m, v);
            }
        }
        best.0.as_minutes()
    }

    let kernel = SmoothingKernel::default();
    let mut zero_phase_ok = 0u32;
    let mut forward_shifted = 0u32;
    const CASES: u32 = 50;

    for case in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + case as u64);
        let center = rng.gen_range(40..=80i64);
        let width: f64 = rng.gen_range(2.5..9.0);
        let amplitude: f64 = rng.gen_range(10.0..30.0);
        let values = (0..121i64)
            .map(|t| {
                let d = (t - center) as f64;
                Some(30.0 + amplitude * (-d * d / (2.0 * width * width)).exp())
            })
            .collect();
        let pulse = series("C5", SeriesSource::Reference, 0, values);

        let zero = smooth_zero_phase(&pulse, &kernel).unwrap();
        if argmax(&zero) == center {
            zero_phase_ok += 1;
        }
        let forward = smooth_forward(&pulse, &kernel).unwrap();
        if (argmax(&forward) - center).abs() >= 1 {
            forward_shifted += 1;
        }
    }

    assert_eq!(
        zero_phase_ok,
        CASES,
        "zero-phase moved the peak in {} cases",
        CASES - zero_phase_ok
    );
    assert!(
        forward_shifted >= 45,
        "forward pass shifted the peak in only {forward_shifted}/{CASES} cases"
    );
}

/// Criterion 6: gaps of up to five minutes in a linear stretch are filled to
/// within 1e-9 of the true line; a six-minute gap excludes the window.
#[test]
fn c06_interpolation_exact_within_gap_limit() {
    let policy = GapPolicy::default();
    let line = |t: i64| 35.0 + 0.8 * t as f64;

    for gap in 1..=5usize {
        let values = (0..30i64)
            .map(|t| (t < 10 || t >= 10 + gap as i64).then(|| line(t)))
            .collect();
        let gappy = series("C6", SeriesSource::Probe, 0, values);
        let filled = interpolate_gaps(&gappy, &policy).unwrap();
        for t in 0..30i64 {
            let got = filled
                .get(MinuteStamp::from_minutes(t))
                .expect("filled series is gap-free");
            assert!(
                (got - line(t)).abs() <= 1e-9,
                "gap {gap}: minute {t} filled as {got}, line says {}",
                line(t)
            );
        }
    }

    let values = (0..30i64)
        .map(|t| (!(10..16).contains(&t)).then(|| line(t)))
        .collect();
    let gappy = series("C6", SeriesSource::Probe, 0, values);
    match interpolate_gaps(&gappy, &policy) {
        Err(Error::ExcludedWindow { .. }) => {}
        other => panic!("six-minute gap: expected window exclusion, got {other:?}"),
    }
}

/// Criterion 7: per-minute aggregation equals the brute-force space-mean
/// formula n * L / sum(travel time) on 1,000 random intervals, to 1e-9.
#[test]
fn c07_space_mean_speed_matches_harmonic_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let segment = SegmentDefinition {
        segment_id: "C7".into(),
        from_group: "GA".into(),
        to_group: "GB".into(),
        length_mi: 1.7,
    };

    let mut observations = Vec::new();
    let mut expected = Vec::with_capacity(1_000);
    for minute in 0..1_000i64 {
        let n = rng.gen_range(1..=8usize);
        let mut total_tt_s = 0.0;
        for trip in 0..n {
            let travel_time_s: f64 = rng.gen_range(30.0..600.0);
            total_tt_s += travel_time_s;
            let arrived_at = MinuteStamp::from_minutes(minute).to_datetime();
            observations.push(TravelTimeObservation {
                segment_id: segment.segment_id.clone(),
                device_id: format!("dev-{minute}-{trip}"),
                departed_at: arrived_at - chrono::Duration::seconds(travel_time_s as i64),
                arrived_at,
                travel_time_s,
                speed_mph: segment.length_mi * 3_600.0 / travel_time_s,
            });
        }
        expected.push(n as f64 * segment.length_mi * 3_600.0 / total_tt_s);
    }

    let aggregated = aggregate_intervals(&observations, &segment).unwrap();
    for (minute, want) in expected.iter().enumerate() {
        let got = aggregated
            .get(MinuteStamp::from_minutes(minute as i64))
            .expect("every minute has observations");
        assert!(
            (got - want).abs() <= 1e-9,
            "minute {minute}: aggregated {got}, oracle {want}"
        );
    }
}

/// Criterion 8: when every mapped piece reports the same speed, conflation
/// returns that speed to 1e-9 regardless of how the segment is partitioned.
#[test]
fn c08_conflation_identity_on_constant_speed() {
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(8_000 + case);
        let n_pieces = rng.gen_range(1..=10usize);
        let speed: f64 = rng.gen_range(8.0..80.0);

        let mut pieces = Vec::with_capacity(n_pieces);
        let mut tmc_series = BTreeMap::new();
        let mut total_mi = 0.0;
        for i in 0..n_pieces {
            let overlap_length_mi: f64 = rng.gen_range(0.05..2.0);
            total_mi += overlap_length_mi;
            let code = format!("P{i}");
            pieces.push(TmcPiece {
                tmc_code: code.clone(),
                overlap_length_mi,
                piece_order: i as u32,
            });
            tmc_series.insert(
                code,
                series("C8", SeriesSource::Probe, 0, vec![Some(speed); 60]),
            );
        }
        let mapping = TmcMapping {
            segment_id: "C8".into(),
            pieces,
        };
        let segment = SegmentDefinition {
            segment_id: "C8".into(),
            from_group: "GA".into(),
            to_group: "GB".into(),
            length_mi: total_mi,
        };

        let composed = compose_probe_series(&tmc_series, &mapping, &segment).unwrap();
        for (_, v) in composed.iter_minutes() {
            let got = v.expect("constant pieces leave no gaps");
            assert!(
                (got - speed).abs() <= 1e-9,
                "case {case}: composed {got} differs from constant {speed}"
            );
        }
    }
}

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn run_pipeline_all(out_dir: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_probe-latency"))
        .arg("all")
        .arg("--config")
        .arg(fixtures_dir().join("pipeline.toml"))
        .arg("--out")
        .arg(out_dir)
        .output()
        .expect("pipeline binary runs");
    assert!(
        status.status.success(),
        "pipeline failed:\n{}",
        String::from_utf8_lossy(&status.stderr)
    );
}

fn csv_files_under(dir: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) {
        for entry in std::fs::read_dir(dir).expect("readable directory") {
            let path = entry.expect("readable entry").path();
            if path.is_dir() {
                walk(&path, base, out);
            } else {
                out.push(path.strip_prefix(base).expect("under base").to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// Drops the volatile generation-time header line; everything else must
/// reproduce byte-for-byte.
fn stable_lines(raw: &str) -> String {
    raw.lines()
        .filter(|l| !l.starts_with("# generated_at="))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// Criterion 9: the full pipeline on the committed fixtures reproduces the
/// committed reports exactly, apart from each file's generation timestamp.
/// Budget: under 10 s.
#[test]
fn c09_end_to_end_golden_run_reproduced() {
    let started = Instant::now();
    let out = tempfile::tempdir().unwrap();
    run_pipeline_all(out.path());

    let golden = golden_dir();
    let golden_files = csv_files_under(&golden);
    let produced_files = csv_files_under(out.path());
    assert_eq!(
        produced_files, golden_files,
        "output file set diverged from the golden set"
    );

    for rel in &golden_files {
        let want = stable_lines(&std::fs::read_to_string(golden.join(rel)).unwrap());
        let got = stable_lines(&std::fs::read_to_string(out.path().join(rel)).unwrap());
        assert!(
            got == want,
            "{} diverged from golden copy:\n--- golden\n{want}\n--- produced\n{got}",
            rel.display()
        );
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(10),
        "took {elapsed:?}, budget 10 s"
    );
}

fn read_report(path: &Path) -> (Vec<String>, Vec<String>, Vec<Vec<String>>) {
    let raw = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut comments = Vec::new();
    let mut rows = Vec::new();
    let mut header = Vec::new();
    for line in raw.lines() {
        if let Some(comment) = line.strip_prefix('#') {
            comments.push(comment.trim().to_string());
        } else if header.is_empty() {
            header = line.split(',').map(str::to_string).collect();
        } else {
            rows.push(line.split(',').map(str::to_string).collect());
        }
    }
    (comments, header, rows)
}

/// Criterion 10: the summary outputs carry the agreed table shapes: means by
/// period, per-segment means with length, slowdown/recovery by period, and a
/// latency histogram with cumulative shares and a 95th percentile.
#[test]
fn c10_report_files_match_declared_schemas() {
    let out = tempfile::tempdir().unwrap();
    run_pipeline_all(out.path());

    let objective_columns = [
        "mean_offset_avd",
        "mean_offset_svd",
        "mean_offset_cor",
        "mean_average_latency",
    ];

    // Period table: one row per observed period plus an overall row.
    let (comments, header, rows) = read_report(&out.path().join("summary_period.csv"));
    assert!(comments.iter().any(|c| c.starts_with("schema_version=")));
    assert_eq!(header[..2], ["period", "n_episodes"]);
    assert_eq!(header[2..], objective_columns);
    assert_eq!(rows.last().map(|r| r[0].as_str()), Some("overall"));
    for row in &rows {
        assert!(
            ["AM", "PM", "Other", "overall"].contains(&row[0].as_str()),
            "period {}",
            row[0]
        );
        row[1].parse::<u32>().expect("episode count");
        for cell in &row[2..] {
            cell.parse::<f64>().expect("objective mean");
        }
    }

    // Segment table: same means keyed by segment with its length.
    let (_, header, rows) = read_report(&out.path().join("summary_segment.csv"));
    assert_eq!(header[..3], ["segment_id", "length_mi", "n_episodes"]);
    assert_eq!(header[3..], objective_columns);
    assert!(!rows.is_empty());
    for row in &rows {
        row[1].parse::<f64>().expect("segment length");
    }

    // Phase table: slowdown and recovery rows per period plus overall.
    let (_, header, rows) = read_report(&out.path().join("summary_phase.csv"));
    assert_eq!(header[..3], ["period", "phase", "n_episodes"]);
    assert_eq!(header[3..], objective_columns);
    for phase in ["slowdown", "recovery"] {
        assert!(
            rows.iter().any(|r| r[0] == "overall" && r[1] == phase),
            "missing overall {phase} row"
        );
    }
    for row in &rows {
        assert!(
            ["slowdown", "recovery"].contains(&row[1].as_str()),
            "phase {}",
            row[1]
        );
    }

    // Distribution: histogram plus cumulative share, annotated with p95.
    let (comments, header, rows) = read_report(&out.path().join("distribution.csv"));
    assert_eq!(header, ["latency_min", "count", "cumulative_fraction"]);
    let p95: i64 = comments
        .iter()
        .find_map(|c| c.strip_prefix("p95_min="))
        .expect("p95 annotation")
        .parse()
        .expect("p95 is whole minutes");
    let mut last_cum = 0.0;
    let mut implied_p95 = None;
    for row in &rows {
        let latency: i64 = row[0].parse().expect("bin latency");
        let cum: f64 = row[2].parse().expect("cumulative fraction");
        row[1].parse::<u64>().expect("bin count");
        assert!(cum >= last_cum, "cumulative fraction decreased");
        last_cum = cum;
        if implied_p95.is_none() && cum >= 0.95 {
            implied_p95 = Some(latency);
        }
    }
    assert!(
        (last_cum - 1.0).abs() <= 5e-5,
        "cumulative ends at {last_cum}"
    );
    assert_eq!(
        Some(p95),
        implied_p95,
        "p95 annotation disagrees with the bins"
    );
}
