mod common;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use common::{diode, repo_path, series};
use pinchsim::analysis::{steady_loop, AnalysisSettings};
use pinchsim::cli::{cmd_synth, Options, RunConfig};
use pinchsim::error::Error;
use pinchsim::gates::{
    extract_device, ingest_loop_csv, truth_table, Branch, DeviceScale, ExtractOptions, GateConfig,
    GateKind, IngestOptions, LoopDeviceModel, PullResistor,
};
use pinchsim::integrator::IntegratorSettings;

fn write_csv(dir: &Path, name: &str, header: &str, rows: impl Iterator<Item = [f64; 3]>) -> PathBuf {
    let mut text = format!("# test trace\n{header}\n");
    for r in rows {
        writeln!(text, "{},{},{}", r[0], r[1], r[2]).unwrap();
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// `periods` turns of `v = sin t`, `i = 1e-3 sin 2t` with `n` samples each.
fn eight(n: usize, periods: usize, turns: f64) -> impl Iterator<Item = [f64; 3]> {
    (0..=n * periods).map(move |k| {
        let t = turns * 2.0 * PI * k as f64 / (n * periods) as f64;
        [t, t.sin(), 1e-3 * (2.0 * t).sin()]
    })
}

#[test]
fn figure_eight_csv_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_csv(dir.path(), "eight.csv", "t,v,i", eight(512, 1, 1.0));
    let got = ingest_loop_csv(&path, &IngestOptions::default()).unwrap();
    assert_eq!(got.rows, 513);
    assert_eq!(got.comments, vec!["test trace".to_string()]);
    assert_eq!(got.duplicates_removed, 0);
    assert_eq!(got.lissajous.vertices().len(), 512);
}

#[test]
fn open_trace_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_csv(dir.path(), "open.csv", "t,v,i", eight(512, 1, 0.8));
    assert!(matches!(
        ingest_loop_csv(&path, &IngestOptions::default()),
        Err(Error::OpenTrace { .. })
    ));
}

#[test]
fn short_and_malformed_files_report_lines() {
    let dir = tempfile::tempdir().unwrap();
    let short = write_csv(dir.path(), "short.csv", "t,v,i", eight(100, 1, 1.0));
    let err = ingest_loop_csv(&short, &IngestOptions::default()).unwrap_err();
    assert!(err.to_string().contains("need at least 256"), "{err}");

    let header = write_csv(dir.path(), "header.csv", "time,v,i", eight(512, 1, 1.0));
    match ingest_loop_csv(&header, &IngestOptions::default()) {
        Err(Error::Ingest { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }

    let bad = dir.path().join("bad.csv");
    let mut text = std::fs::read_to_string(write_csv(dir.path(), "ok.csv", "t,v,i", eight(512, 1, 1.0))).unwrap();
    text = text.replacen("\n0,", "\n0,abc,", 1);
    std::fs::write(&bad, text).unwrap();
    match ingest_loop_csv(&bad, &IngestOptions::default()) {
        Err(Error::Ingest { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn repeated_samples_are_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<[f64; 3]> = eight(512, 1, 1.0).collect();
    let mut doubled = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        doubled.push(*r);
        if k % 64 == 10 {
            doubled.push([r[0] + 1e-9, r[1], r[2]]);
        }
    }
    let path = write_csv(dir.path(), "dup.csv", "t,v,i", doubled.into_iter());
    let got = ingest_loop_csv(&path, &IngestOptions::default()).unwrap();
    assert_eq!(got.duplicates_removed, 8);
    assert_eq!(got.lissajous.vertices().len(), 512);
}

#[test]
fn either_period_of_the_shipped_trace_gives_the_same_device() {
    let path = repo_path("configs/data/memristor.csv");
    let scale = DeviceScale::SI;
    let device = |index| {
        let opts = IngestOptions {
            periods: 2,
            period_index: index,
            ..IngestOptions::default()
        };
        let lp = ingest_loop_csv(&path, &opts).unwrap().lissajous;
        extract_device(&lp, scale, &ExtractOptions::default()).unwrap()
    };
    let (a, b) = (device(0), device(1));
    let range = a.current_range();
    for (x, y) in a.rising.iter().chain(&a.falling).zip(b.rising.iter().chain(&b.falling)) {
        assert!((x - y).abs() <= 1e-6 * range, "{x} vs {y}");
    }
    assert_eq!(a.polarity, b.polarity);
}

#[test]
fn shipped_trace_regenerates_identically() {
    let cfg = RunConfig::load(&repo_path("configs/synth.toml")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = Options {
        out: Some(dir.path().to_path_buf()),
        ..Options::default()
    };
    let fresh = cmd_synth(&cfg, &opts).unwrap();
    assert_eq!(
        std::fs::read(fresh).unwrap(),
        std::fs::read(repo_path("configs/data/memristor.csv")).unwrap()
    );
}

#[test]
fn resonator_loop_branches_meet_at_the_pinch() {
    let traj = series(1.0, 0.1, diode(1.0, false))
        .simulate(30, 1024, &IntegratorSettings::default())
        .unwrap();
    let a = AnalysisSettings::default();
    let lp = steady_loop(&traj, a.discard_periods, a.check_periods, a.periodicity_tolerance).unwrap();
    let dev = extract_device(&lp, DeviceScale::resonator(0.6, 10e3), &ExtractOptions::default()).unwrap();
    assert_eq!(dev.pinches.len(), 1);
    assert!(dev.pinch_mismatch <= 1e-3, "mismatch {}", dev.pinch_mismatch);
    let p = dev.pinches[0][0];
    let gap = (dev.current(p, Branch::Rising) - dev.current(p, Branch::Falling)).abs();
    assert!(gap <= 1e-3 * dev.current_range(), "gap {gap:e}");
}

#[test]
fn ideal_diode_gates_follow_boolean_logic() {
    let dev = LoopDeviceModel::ideal_diode(1e3, 1e6, 1.5).unwrap();
    for (gate, pull, expected) in [
        (GateKind::Or, 0.0, "LHHH"),
        (GateKind::And, 1.0, "LLLH"),
    ] {
        let cfg = GateConfig {
            gate,
            input_high: 1.0,
            pull: Some(PullResistor {
                resistance: 1e5,
                voltage: pull,
            }),
            ..GateConfig::default()
        };
        let table = truth_table(&cfg, [&dev, &dev], &IntegratorSettings::default()).unwrap();
        assert_eq!(table.pattern(), expected, "{gate:?}");
        assert!(table.is_correct());
    }
}
