use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use wimf::datagen::{add_noise, gamma_rule, generate, DatasetKind, GeneratorParams, Grid};
use wimf::io::{read_matrix_csv, KeyValues};

fn wimf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wimf"))
        .args(args)
        .env_remove("WIMF_OUT")
        .env_remove("WIMF_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = wimf(args);
    assert!(
        out.status.success(),
        "wimf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    wimf(args).status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small homogeneous dataset: 21 spatial samples, 400 time samples.
fn small_homogeneous(dir: &Path, snr: &str) {
    ok(&[
        "generate", "--kind", "homogeneous", "--snr", snr, "--seed", "7", "--delta-l", "0.04546",
        "--delta-t", "0.0025", "--length-t", "1", "--out", p(dir),
    ]);
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn generate_writes_dataset_and_reports_shape() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run1");
    let stdout = ok(&["generate", "--kind", "homogeneous", "--snr", "inf", "--seed", "7", "--out", p(&run)]);
    assert!(stdout.contains("110 x 4000"), "{stdout}");
    assert!(stdout.contains("truth modes: 6"), "{stdout}");
    for f in ["Y.csv", "truth.csv", "meta.cfg", "config.cfg"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let meta = KeyValues::read(&run.join("meta.cfg")).unwrap();
    assert_eq!(meta.get("kind"), Some("homogeneous"));
    assert_eq!(meta.get("seed"), Some("7"));
    assert_eq!(meta.get("snr_db"), Some("inf"));
}

#[test]
fn segmented_has_eight_truth_modes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["generate", "--kind", "segmented", "--out", p(dir.path())]);
    let truth = read_matrix_csv(&dir.path().join("truth.csv")).unwrap();
    assert_eq!(truth.ncols(), 8);
    assert_eq!(truth.nrows(), 200);
}

#[test]
fn generation_is_byte_identical_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["generate", "--kind", "traveling", "--snr", "-5", "--seed", "3", "--delta-t", "0.01", "--out", p(d)]);
    }
    for f in ["Y.csv", "truth.csv", "meta.cfg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let preset = Grid::preset(DatasetKind::Traveling, wimf::datagen::GridPreset::Dense);
    let grid = Grid::new(preset.delta_l, preset.length_l, 0.01, preset.length_t).unwrap();
    let params = GeneratorParams::reference(DatasetKind::Traveling, 3, false);
    let expected = add_noise(&generate(&grid, &params).unwrap(), -5.0, 3).unwrap();
    assert_eq!(read_matrix_csv(&a.join("Y.csv")).unwrap(), expected.y);
    assert_eq!(read_matrix_csv(&a.join("truth.csv")).unwrap(), expected.truth);
}

#[test]
fn config_file_replays_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let (first, second) = (dir.path().join("first"), dir.path().join("second"));
    ok(&["generate", "--kind", "inhomogeneous", "--snr", "3", "--seed", "9", "--delta-t", "0.01", "--out", p(&first)]);
    let cfg = first.join("config.cfg");
    ok(&["--config", p(&cfg), "--out", p(&second)]);
    assert_eq!(fs::read(first.join("Y.csv")).unwrap(), fs::read(second.join("Y.csv")).unwrap());
    assert_eq!(
        fs::read_to_string(second.join("config.cfg")).unwrap(),
        fs::read_to_string(&cfg).unwrap().replace(p(&first), p(&second))
    );
}

#[test]
fn factorize_then_evaluate_recovers_noiseless_modes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let fit = dir.path().join("fit");
    let eval = dir.path().join("eval");
    small_homogeneous(&data, "inf");
    let stdout = ok(&["factorize", "--input", p(&data), "--max-modes", "6", "--delta", "100", "--out", p(&fit)]);
    assert!(stdout.contains("modes"), "{stdout}");
    for f in ["D.csv", "X.csv", "k.csv", "trace.csv", "config.cfg"] {
        assert!(fit.join(f).exists(), "{f}");
    }

    let cfg = KeyValues::read(&fit.join("config.cfg")).unwrap();
    let gamma: f64 = cfg.parse_f64("gamma").unwrap().unwrap();
    assert_eq!(gamma, gamma_rule(21, 100.0).unwrap());
    assert!(cfg.parse_f64("lambda").unwrap().unwrap() > 0.0);

    let rows = csv_rows(&fit.join("trace.csv"));
    assert_eq!(rows[0][5], "objective");
    let mut seq = Vec::new();
    for r in &rows[1..] {
        seq.push(r[5].parse::<f64>().unwrap());
        if r[8] == "append" {
            seq.push(r[10].parse::<f64>().unwrap());
        }
    }
    for w in seq.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "objective rose: {w:?}");
    }
    let last = rows.last().unwrap();
    assert_ne!(last[8], "append");
    let modes = read_matrix_csv(&fit.join("D.csv")).unwrap();
    assert!(modes.ncols() <= 6);

    ok(&[
        "evaluate", "--recovered", p(&fit.join("D.csv")), "--truth", p(&data.join("truth.csv")), "--out", p(&eval),
    ]);
    let report = csv_rows(&eval.join("report.csv"));
    assert_eq!(
        report[0],
        ["dataset", "snr_db", "trials", "mse_e3_mean", "mse_e3_std", "fmse_e3_mean", "fmse_e3_std"]
    );
    assert_eq!(report[1][0], "homogeneous");
    let mse: f64 = report[1][3].parse().unwrap();
    assert!(mse < 1.0, "mse x1e3 = {mse}");
}

#[test]
fn mode_cap_keeps_the_final_polar_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let fit = dir.path().join("fit");
    small_homogeneous(&data, "inf");
    ok(&["factorize", "--input", p(&data), "--max-modes", "2", "--lambda", "0.01", "--out", p(&fit)]);
    let rows = csv_rows(&fit.join("trace.csv"));
    let last = rows.last().unwrap();
    assert_eq!(last[8], "mode-cap");
    assert!(last[6].parse::<f64>().unwrap() > 1.0);
    assert_eq!(read_matrix_csv(&fit.join("D.csv")).unwrap().ncols(), 2);
}

#[test]
fn evaluating_truth_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    small_homogeneous(dir.path(), "inf");
    let truth = dir.path().join("truth.csv");
    let out = dir.path().join("eval");
    let stdout = ok(&["evaluate", "--recovered", p(&truth), "--truth", p(&truth), "--out", p(&out)]);
    assert!(stdout.contains("mse x1e3 = 0.0"), "{stdout}");
    let report = csv_rows(&out.join("report.csv"));
    assert_eq!(report[1][3], "0.0");
    assert!(report[1][5].parse::<f64>().unwrap() < 1e-20);
}

#[test]
fn filter_response_peaks_at_the_center() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["filter-response", "--k-bar", "2.5", "--gamma", "1000", "--n", "400", "--out", p(dir.path())]);
    let rows = csv_rows(&dir.path().join("filter.csv"));
    assert_eq!(rows[0], ["eigenvalue", "coefficient"]);
    let pairs: Vec<(f64, f64)> = rows[1..].iter().map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap())).collect();
    assert_eq!(pairs.len(), 400);
    let peak = pairs.iter().cloned().fold((0.0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
    let nearest = pairs.iter().map(|x| (x.0 + 2.5).abs()).fold(f64::INFINITY, f64::min);
    assert!(((peak.0 as f64) + 2.5).abs() == nearest);
    assert!(peak.1 > 0.99);

    let flat = dir.path().join("flat");
    ok(&["filter-response", "--k-bar", "1.5", "--gamma", "0", "--out", p(&flat)]);
    let rows = csv_rows(&flat.join("filter.csv"));
    assert!(rows[1..].iter().all(|r| r[1] == "1.0"));
}

#[test]
fn benchmark_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "benchmark", "--kind", "homogeneous", "--snr", "inf", "--trials", "2", "--grid", "printed", "--threads", "1",
        "--out", p(dir.path()),
    ]);
    let rows = csv_rows(&dir.path().join("benchmark.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains(&"wimf_mse_e3_mean".to_string()));
    assert!(rows[0].contains(&"pca_mse_e3_mean".to_string()));
    assert_eq!(rows[1][0], "homogeneous");
    assert_eq!(rows[1][1], "inf");
    let trials = csv_rows(&dir.path().join("trials.csv"));
    assert_eq!(trials.len(), 1 + 2 * 2);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_wimf"))
        .args(["filter-response", "--k-bar", "1", "--gamma", "10", "--n", "8"])
        .env("WIMF_OUT", &target)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("filter.csv").exists());
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path());
    assert_eq!(code(&["generate", "--kind", "nonsense", "--out", out]), 1);
    assert_eq!(code(&["generate", "--kind", "homogeneous", "--bogus"]), 1);
    assert_eq!(code(&["filter-response", "--k-bar", "5", "--gamma", "1", "--out", out]), 1);
    assert_eq!(code(&["factorize", "--input", p(&dir.path().join("missing")), "--out", out]), 2);

    let data = dir.path().join("data");
    small_homogeneous(&data, "inf");
    let seg = dir.path().join("seg");
    ok(&["generate", "--kind", "segmented", "--out", p(&seg)]);
    assert_eq!(
        code(&["evaluate", "--recovered", p(&seg.join("truth.csv")), "--truth", p(&data.join("truth.csv")), "--out", out]),
        2
    );
    assert_eq!(code(&["--help"]), 0);
}
