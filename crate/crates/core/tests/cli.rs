//! The `seer` binary end to end: outputs, row counts and exit codes.

use std::fs;
use std::path::Path;
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seer::occ_predict::TinyNet;

fn seer(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_seer")).args(args).output().expect("spawn seer");
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

/// A single 6 m x 4 m hall, small enough that a run takes about a second.
fn small_world_config(dir: &Path) -> String {
    let p = dir.join("small.cfg");
    fs::write(&p, "# one hall, no rooms\nlength = 6\ncorridor_width = 4\nrooms = 0\n").unwrap();
    p.display().to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn benchmark_two_methods_five_repeats_gives_ten_rows() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_world_config(d.path());
    let out = d.path().join("bench");
    let (code, text) = seer(&["benchmark", "--methods", "frontier,seer", "--repeats", "5", "--config", &cfg, "--out", &s(&out)]);
    assert_eq!(code, 0, "{text}");
    let csv = fs::read_to_string(out.join("benchmark.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("method,seed,time_s,path_m,success,coverage"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10, "{csv}");
    assert_eq!(rows.iter().filter(|r| r.starts_with("frontier,")).count(), 5);
    assert_eq!(rows.iter().filter(|r| r.starts_with("seer,")).count(), 5);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3, "{summary}");
}

#[test]
fn explore_writes_report_log_and_trajectory_then_plots() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_world_config(d.path());
    let out = d.path().join("run");
    let (code, text) = seer(&["explore", "--seed", "2", "--method", "seer", "--config", &cfg, "--out", &s(&out)]);
    assert_eq!(code, 0, "{text}");
    for f in ["report.txt", "run.log", "trajectory.txt", "coverage.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("method=seer"), "{report}");
    let log = fs::read_to_string(out.join("run.log")).unwrap();
    assert!(log.contains("replan reason="), "{log}");
    let first = fs::read_to_string(out.join("trajectory.txt")).unwrap();
    let cols = first.lines().find(|l| !l.starts_with('#')).unwrap().split_whitespace().count();
    assert_eq!(cols, 5);

    let (code, text) = seer(&[
        "plot",
        "--seed",
        "2",
        "--config",
        &cfg,
        "--trajectory",
        &s(&out.join("trajectory.txt")),
        "--out",
        &s(&out),
    ]);
    assert_eq!(code, 0, "{text}");
    let img = fs::read(out.join("plot.ppm")).unwrap();
    assert!(img.starts_with(b"P6\n"));
}

#[test]
fn same_seed_same_report() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_world_config(d.path());
    let runs: Vec<String> = ["a", "b"]
        .iter()
        .map(|n| {
            let out = d.path().join(n);
            let (code, text) = seer(&["explore", "--seed", "5", "--method", "frontier", "--config", &cfg, "--out", &s(&out)]);
            assert_eq!(code, 0, "{text}");
            fs::read_to_string(out.join("run.log")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn world_file_round_trip_through_explore() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_world_config(d.path());
    let (code, text) = seer(&["gen-world", "--seed", "9", "--config", &cfg, "--out", &s(d.path())]);
    assert_eq!(code, 0, "{text}");
    let world = d.path().join("world_9.txt");
    let a = d.path().join("from_file");
    let b = d.path().join("from_seed");
    let (code, text) = seer(&["explore", "--world", &s(&world), "--method", "frontier", "--out", &s(&a)]);
    assert_eq!(code, 0, "{text}");
    let (code, text) = seer(&["explore", "--seed", "9", "--config", &cfg, "--method", "frontier", "--out", &s(&b)]);
    assert_eq!(code, 0, "{text}");
    assert_eq!(fs::read_to_string(a.join("report.txt")).unwrap(), fs::read_to_string(b.join("report.txt")).unwrap());
}

#[test]
fn train_data_then_predict_eval() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_world_config(d.path());
    let pairs = d.path().join("pairs");
    let (code, text) = seer(&["train-data", "--seed", "1", "--samples", "3", "--config", &cfg, "--out", &s(&pairs)]);
    assert_eq!(code, 0, "{text}");
    for k in 0..3 {
        for ext in ["in", "tar"] {
            assert!(pairs.join(format!("pair_{k:05}.{ext}")).exists());
        }
    }

    let weights = d.path().join("net.bin");
    TinyNet::random(&mut ChaCha8Rng::seed_from_u64(1)).save(&weights).unwrap();
    let mut totals = Vec::new();
    for (name, extra) in [("oracle", None), ("null", None), ("slab", None), ("tinynet", Some(&weights))] {
        let out = d.path().join(name);
        let mut args = vec!["predict-eval".to_string(), "--data".into(), s(&pairs), "--predictor".into(), name.into(), "--out".into(), s(&out)];
        if let Some(w) = extra {
            args.extend(["--weights".to_string(), s(w)]);
        }
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, text) = seer(&args);
        assert_eq!(code, 0, "{name}: {text}");
        let csv = fs::read_to_string(out.join("losses.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some("pair,loss_occ,loss_struct,loss_total"));
        assert_eq!(csv.lines().count(), 4, "{csv}");
        let total: f64 = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
        totals.push((name, total));
    }
    // the oracle reproduces the target, so it has the lowest loss
    let oracle = totals[0].1;
    assert!(totals.iter().all(|&(_, t)| oracle <= t + 1e-9), "{totals:?}");
}

#[test]
fn eval_gain_writes_both_errors() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_world_config(d.path());
    let (code, text) = seer(&["eval-gain", "--seed", "3", "--samples", "5", "--config", &cfg, "--out", &s(d.path())]);
    assert_eq!(code, 0, "{text}");
    let g = fs::read_to_string(d.path().join("gain_error.txt")).unwrap();
    assert!(g.contains("classical_mean_pct_error=") && g.contains("predicted_mean_pct_error="), "{g}");
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(seer(&["--help"]).0, 0);
    assert_eq!(seer(&["explore", "--help"]).0, 0);
    assert_eq!(seer(&["fly"]).0, 2);
    assert_eq!(seer(&["explore", "--seed", "notanumber"]).0, 2);
    assert_eq!(seer(&["explore", "--world", "/no/such/world.txt", "--out", &s(d.path())]).0, 2);
    assert_eq!(seer(&["predict-eval", "--data", &s(d.path()), "--out", &s(d.path())]).0, 2);
    // a world too large to generate is a config problem, not a crash
    let cfg = d.path().join("big.cfg");
    fs::write(&cfg, "length = 80\n").unwrap();
    assert_eq!(seer(&["gen-world", "--config", &s(&cfg), "--out", &s(d.path())]).0, 2);
}
