use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use parabuck::presets;
use parabuck::sim::{run, TraceRecord};
use parabuck::trace_io::read_trace;
use parabuck_cli::{load_config, BUNDLED};

fn parabuck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parabuck"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn same_bits(a: &TraceRecord, b: &TraceRecord) -> bool {
    let scalars = |r: &TraceRecord| {
        [r.t, r.q, r.v, r.phi_t, r.mu, r.xi, r.h, r.h_d, r.cost].map(f64::to_bits)
    };
    let vecs = |r: &TraceRecord| {
        [&r.phi, &r.casimir, &r.duty, &r.lambda]
            .iter()
            .flat_map(|v| v.iter().map(|x| x.to_bits()))
            .collect::<Vec<_>>()
    };
    scalars(a) == scalars(b) && vecs(a) == vecs(b) && a.saturated == b.saturated
}

#[test]
fn bundled_configs_match_presets() {
    let expected = [presets::exp1(), presets::exp2(), presets::exp2_esr()];
    for ((name, _), preset) in BUNDLED.iter().zip(expected) {
        let s = load_config(name).unwrap().to_scenario().unwrap();
        assert_eq!(s, preset, "{name}");
    }
}

#[test]
fn run_exp2_writes_lossless_csv_and_oracle_distance() {
    let dir = tempfile::tempdir().unwrap();
    let out = parabuck(&[
        "run",
        "--config",
        "exp2",
        "--out",
        dir.path().to_str().unwrap(),
        "--decimate",
        "100",
    ]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("oracle rel dist"));
    assert!(text.contains("phi within 0.5% of optimum at t=2"));

    let csv = dir.path().join("exp2.csv");
    let (m, records) = read_trace(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(m, 2);
    let header = fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(
        header,
        "t,phi_1,phi_2,Q,v,C_1,phi_T,d_1,d_2,lambda_1,mu,xi,H,H_d,J,sat_1,sat_2"
    );

    let mut s = presets::exp2();
    s.decimate = 100;
    let trace = run(&s).unwrap();
    assert_eq!(records.len(), trace.records.len());
    assert!(records
        .iter()
        .zip(&trace.records)
        .all(|(a, b)| same_bits(a, b)));
    assert!(dir.path().join("exp2_summary.txt").exists());
}

#[test]
fn open_loop_nan_survives_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ol.toml");
    fs::write(
        &cfg,
        r#"
name = "ol"
duration = 0.01
dt = 1e-4
decimate = 1

[bank]
inductance = [2.83e-3, 1.3e-3]
capacitance = 22e-3
load = 20.0
source = [24.0, 24.0]

[controller]
kind = "open_loop"
mu_offset = 0.5
mu_amplitude = 0.1
mu_frequency = 50.0

[cost]
kind = "tracking"
c_star = 0.0
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = parabuck(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let (_, records) = read_trace(fs::File::open(out_dir.join("ol.csv")).unwrap()).unwrap();
    assert_eq!(records.len(), 101);
    assert!(records.iter().all(|r| r.h_d.is_nan()));
    let s = load_config(cfg.to_str().unwrap())
        .unwrap()
        .to_scenario()
        .unwrap();
    let trace = run(&s).unwrap();
    assert!(records
        .iter()
        .zip(&trace.records)
        .all(|(a, b)| same_bits(a, b)));
}

fn assert_empty(dir: &Path) {
    assert!(!dir.exists() || fs::read_dir(dir).unwrap().next().is_none());
}

#[test]
fn malformed_config_is_a_config_error_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = BUNDLED[1]
        .1
        .replace("capacitance = 22e-3", "capacitance = [22e-3]");
    fs::write(&cfg, text).unwrap();
    let out_dir = dir.path().join("out");
    let out = parabuck(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 10"), "{err}");
    assert_empty(&out_dir);

    let text = BUNDLED[1].1.replace("load = 20.0", "load = -20.0");
    fs::write(&cfg, text).unwrap();
    let out = parabuck(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("load"));
    assert_empty(&out_dir);

    let out = parabuck(&["run", "--config", "no/such/file.toml"]);
    assert_eq!(code(&out), 2);
    let out = parabuck(&["run", "--config", "exp2", "--dt", "-1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn failed_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tight.toml");
    let text = BUNDLED[1]
        .1
        .replace("duration = 2.0", "duration = 0.2")
        .replace("t = 1.0\naction", "t = 0.1\naction")
        .replace("at = 1.0", "at = 0.1")
        .replace("at = 2.0", "at = 0.2");
    fs::write(&cfg, text).unwrap();
    let out = parabuck(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 1, "{}", stdout(&out));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn non_finite_state_is_a_runtime_error_with_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("blowup.toml");
    let text = format!("{}\n[initial]\nphi = [1e308, -1e308]\n", BUNDLED[1].1);
    fs::write(&cfg, text).unwrap();
    let out_dir = dir.path().join("out");
    let out = parabuck(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
    assert!(out_dir.join("exp2_partial.csv").exists());
}

#[test]
fn verify_green_reproducible_and_detects_corruption() {
    let a = parabuck(&["verify", "--seed", "7", "--draws", "20"]);
    let b = parabuck(&["verify", "--seed", "7", "--draws", "20"]);
    assert_eq!(code(&a), 0, "{}", stdout(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(!stdout(&a).contains("FAIL"));

    let bad = parabuck(&["verify", "--draws", "5", "--corrupt-gamma"]);
    assert_eq!(code(&bad), 1);
    let casimir = stdout(&bad)
        .lines()
        .find(|l| l.contains("Casimir residual, ideal"))
        .unwrap()
        .to_string();
    assert!(casimir.starts_with("FAIL"), "{casimir}");
}

#[test]
fn sweep_load_regulates_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = parabuck(&[
        "sweep",
        "--config",
        "exp2",
        "--param",
        "R",
        "--decimate",
        "1000",
        "--out",
        dir.path().to_str().unwrap(),
        "5",
        "10",
        "20",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_path(dir.path().join("exp2_sweep_R.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for (row, r) in rows.iter().zip(["5", "10", "20"]) {
        assert_eq!(&row[0], r);
        let q: f64 = row[1].parse().unwrap();
        assert!((q - 0.264).abs() < 5e-3 * 0.264);
        let oracle: f64 = row[7].parse().unwrap();
        assert!(oracle < 5e-3);
    }
}

#[test]
fn sweep_esr_scale_keeps_q_but_moves_repartition() {
    let out = parabuck(&[
        "sweep",
        "--config",
        "exp2_esr",
        "--param",
        "r_scale",
        "--decimate",
        "1000",
        "0",
        "1",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(2)
        .take(3)
        .map(|l| l.split_whitespace().collect())
        .collect();
    let q: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let dist: Vec<f64> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    for v in &q {
        assert!((v - 0.264).abs() < 5e-3 * 0.264);
    }
    assert!(dist[0] < 1e-4, "{dist:?}");
    assert!(dist[1] > dist[0] && dist[2] > dist[1], "{dist:?}");
}

#[test]
fn sweep_usage_errors() {
    let out = parabuck(&["sweep", "--config", "exp2", "--param", "R"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least one value"));
    let out = parabuck(&["sweep", "--config", "exp2", "--param", "L", "1"]);
    assert_eq!(code(&out), 2);
    let out = parabuck(&["sweep", "--config", "exp2", "--param", "r_scale", "2"]);
    assert_eq!(code(&out), 2);
    let out = parabuck(&["frobnicate"]);
    assert_eq!(code(&out), 2);
}
