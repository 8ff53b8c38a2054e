use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aaflow::model::Preset;
use aaflow_cli::config::ExperimentConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_aaflow"));
    for var in ["AAF_CONFIG", "AAF_PRESET", "AAF_SEED", "AAF_THREADS", "AAF_OUT", "AAF_STRICT", "AAF_QUIET"] {
        c.env_remove(var);
    }
    c.arg("--quiet");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn aaflow")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn presets_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn derive_prints_closed_form_constants() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--preset", "p_stable", "--out", dir.path().to_str().unwrap(), "derive"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for line in ["delta = 1\n", "u = 4\n", "v = 6\n", "beta = 1.5\n", "kappa = 1\n", "limit_case = stable\n"] {
        assert!(text.contains(line), "missing {line:?} in {text}");
    }
    let m = manifest(dir.path());
    assert_eq!(m["command"], "derive");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(dir.path().join("derive.json").exists());
}

#[test]
fn preset_files_match_builtin_presets() {
    for preset in Preset::ALL {
        let path = presets_dir().join(format!("{}.toml", preset.name()));
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.flow_params().unwrap(), preset.params::<f64>(), "{}", path.display());
        assert_eq!(cfg.params_name(), preset.name());
        cfg.validate().unwrap();
    }
}

#[test]
fn tails_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(&["--preset", "p_clt", "--seed", "7", "--threads", "1", "--out", d.path().to_str().unwrap(), "tails", "--n", "1000000"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<String> =
        std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).filter(|n| n != "timing.json").collect();
    names.sort();
    assert!(names.contains(&"returns.bin".to_string()));
    assert!(names.contains(&"manifest.json".to_string()));
    for n in &names {
        let x = std::fs::read(a.path().join(n)).unwrap();
        let y = std::fs::read(b.path().join(n)).unwrap();
        assert!(x == y, "{n} differs between runs");
    }
    let bin = std::fs::read(a.path().join("returns.bin")).unwrap();
    assert_eq!(&bin[..8], b"AAFRET01");
    assert_eq!(bin.len(), 20 + 53 * 1_000_000);

    let (header, rows) = csv_rows(&a.path().join("survival.csv"));
    assert_eq!(header, ["tau", "survival"]);
    assert_eq!(rows[0][1], 1.0);
    assert!(rows.windows(2).all(|w| w[0][1] > w[1][1] && w[0][0] < w[1][0]));
}

#[test]
fn limits_emit_report_samples_and_qq() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = run(&["--preset", "p_clt", "--out", d, "limits", "--time", "500", "--n", "300"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("limit_report.json")).unwrap()).unwrap();
    assert_eq!(report["case"], "clt");
    assert_eq!(report["sample_count"], 300);
    let (_, samples) = csv_rows(&dir.path().join("samples.csv"));
    let (header, qq) = csv_rows(&dir.path().join("qq.csv"));
    assert_eq!(header, ["probability", "sample", "theoretical"]);
    let min = samples.iter().map(|r| r[0]).fold(f64::INFINITY, f64::min);
    let max = samples.iter().map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(qq.first().unwrap()[1], min);
    assert_eq!(qq.last().unwrap()[1], max);
    assert!(qq.windows(2).all(|w| w[0][2] <= w[1][2]));

    let again = run(&["--out", d, "plot-data", "--kind", "qq"]);
    assert!(again.status.success());
    assert_eq!(csv_rows(&dir.path().join("qq.csv")).1, qq);
}

#[test]
fn pressure_eigen_curve_is_sorted_in_u() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = run(&["--preset", "p_clt", "--out", d, "pressure", "--resolution", "32", "--max-depth", "3", "--srb-returns", "20000", "--u-points", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&dir.path().join("eigen_curve.csv"));
    assert_eq!(header, ["u", "s", "lambda", "one_minus_lambda", "pi_u"]);
    assert_eq!(rows.len(), 5);
    assert!(rows.windows(2).all(|w| w[0][0] < w[1][0]));
    assert!(rows.iter().all(|r| r[2] < 1.0 && (r[3] - (1.0 - r[2])).abs() < 1e-15));
    assert!(dir.path().join("relpres.json").exists());
    let ids: Vec<u64> = manifest(dir.path())["checks"].as_array().unwrap().iter().map(|c| c["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, [11, 12]);
}

#[test]
fn full_report_lists_every_check_and_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--preset", "p_clt", "--out", dir.path().to_str().unwrap(), "full-report", "--profile", "smoke"]);
    let m = manifest(dir.path());
    let checks = m["checks"].as_array().unwrap();
    let ids: Vec<u64> = checks.iter().map(|c| c["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, (1..=13).collect::<Vec<u64>>());
    let any_failed = checks.iter().any(|c| !c["passed"].as_bool().unwrap());
    assert_eq!(m["passed"].as_bool().unwrap(), !any_failed);
    assert_eq!(o.status.code(), Some(if any_failed { 1 } else { 0 }));
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert_eq!(summary.matches("target:").count(), 13);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n[tails]\nsamples = 5\n").unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["--config", bad.to_str().unwrap(), "--out", out, "derive"]).status.code(), Some(2));
    assert_eq!(run(&["--preset", "p_unknown", "--out", out, "derive"]).status.code(), Some(2));
    assert_eq!(run(&["--preset", "p_stable", "--out", out, "limits", "--case", "clt"]).status.code(), Some(2));
    assert_eq!(run(&["--out", out, "plot-data", "--kind", "histogram"]).status.code(), Some(2));
    assert_eq!(run(&["--out", out, "tails", "--k-frac", "0.5"]).status.code(), Some(2));
    assert_eq!(run(&["--bogus-flag", "derive"]).status.code(), Some(2));
}

#[test]
fn missing_artifact_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--out", dir.path().to_str().unwrap(), "plot-data", "--kind", "survival"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn environment_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().env("AAF_SEED", "11").env("AAF_PRESET", "p_boundary").args(["--out", dir.path().to_str().unwrap(), "derive"]).output().unwrap();
    assert!(o.status.success());
    let m = manifest(dir.path());
    assert_eq!(m["seed"], 11);
    assert_eq!(m["params"], "p_boundary");
    assert!(stdout(&o).contains("beta = 2\n"));
}

#[test]
fn strict_flag_turns_failed_checks_into_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    // 300 windows of length 500 are far from the limit law at a 1e-4 threshold.
    let args = ["--preset", "p_clt", "--out", d, "limits", "--time", "500", "--n", "300", "--threshold-gaussian", "0.0001"];
    assert_eq!(run(&args).status.code(), Some(0));
    let mut strict = vec!["--strict"];
    strict.extend(args);
    assert_eq!(run(&strict).status.code(), Some(1));
}
