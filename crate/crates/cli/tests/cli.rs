use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wag(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wag"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("WAG_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

const SMALL_RUN: &str = r#"{
  "format_version": 1,
  "grid": { "tile_size_m": 90, "rows": 16, "cols": 16 },
  "embeddings": { "dim": 32, "calibrate": { "target_sigma": 0.1, "samples": 1000 } },
  "filter": { "particles": 3000, "model": { "kind": "gaussian", "sigma": 0.1 } },
  "init": { "mode": "exact" },
  "odometry_noise_frac": 0.05,
  "path": { "kind": "generated", "num_steps": 15, "step_length_m": 200 },
  "seed": 3
}"#;

#[test]
fn build_db_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "db.json",
        r#"{ "grid": { "tile_size_m": 64, "rows": 16, "cols": 16 }, "dim": 16, "seed": 4 }"#,
    );
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = wag(&["--config", cfg, "build-db"], &a);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("tiles: 256"));
    assert_eq!(code(&wag(&["--config", cfg, "build-db"], &b)), 0);
    let (ma, mb) = (json(&a.join("db.json")), json(&b.join("db.json")));
    assert_eq!(ma["checksum"], mb["checksum"]);
    assert_eq!(fs::read(a.join("db.bin")).unwrap(), fs::read(b.join("db.bin")).unwrap());
    assert_eq!(fs::metadata(a.join("db.bin")).unwrap().len(), 256 * 16 * 4);
    assert_eq!(json(&a.join("db.meta.json"))["tool_version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn import_with_mismatched_grid_fails_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let src = write(
        dir.path(),
        "src.json",
        r#"{ "grid": { "tile_size_m": 64, "rows": 4, "cols": 4 }, "dim": 8 }"#,
    );
    assert_eq!(code(&wag(&["--config", src.to_str().unwrap(), "build-db"], dir.path())), 0);
    let cfg = write(
        dir.path(),
        "import.json",
        r#"{ "grid": { "tile_size_m": 64, "rows": 8, "cols": 8 }, "import": "db.json" }"#,
    );
    let o = wag(&["--config", cfg.to_str().unwrap(), "build-db"], &dir.path().join("x"));
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid"));
}

#[test]
fn run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", SMALL_RUN);
    let o = wag(&["--config", cfg.to_str().unwrap(), "run"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&dir.path().join("summary.json"));
    assert!(summary["summary"]["average_error_m"].as_f64().unwrap() >= 0.0);
    assert_eq!(summary["summary"]["steps"], 15);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 16);
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with(
        "step,true_x,true_y,est_x,est_y,error_m,dispersion_rms_m,max_sim,argmax_row,argmax_col,ms\n"
    ));
    assert_eq!(trace.lines().count(), 16);
    assert!(dir.path().join("run_meta.json").exists());
}

#[test]
fn trace_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", SMALL_RUN);
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("one"), dir.path().join("many"));
    assert_eq!(code(&wag(&["--config", cfg, "--threads", "1", "run"], &a)), 0);
    assert_eq!(code(&wag(&["--config", cfg, "--threads", "4", "run"], &b)), 0);
    assert_eq!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", SMALL_RUN);
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&wag(&["--config", cfg, "--seed", "99", "run"], &a)), 0);
    assert_eq!(code(&wag(&["--config", cfg, "run"], &b)), 0);
    assert_eq!(json(&a.join("summary.json"))["seed"], 99);
    assert_ne!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());
}

#[test]
fn missing_db_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL_RUN.replace(r#""dim": 32,"#, r#""db_path": "nowhere/db.json","#);
    let cfg = write(dir.path(), "run.json", &body);
    assert_eq!(code(&wag(&["--config", cfg.to_str().unwrap(), "run"], dir.path())), 3);
}

#[test]
fn bad_config_is_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", &SMALL_RUN.replace("\"particles\": 3000", "\"particles\": 0"));
    assert_eq!(code(&wag(&["--config", cfg.to_str().unwrap(), "run"], dir.path())), 1);
    let cfg = write(dir.path(), "junk.json", "{ not json");
    assert_eq!(code(&wag(&["--config", cfg.to_str().unwrap(), "run"], dir.path())), 1);
}

#[test]
fn degenerate_run_exits_2_and_flushes_partial_trace() {
    // Huge motion noise throws every particle off a 2x2 grid after the
    // first update.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "lost.json",
        r#"{
  "grid": { "tile_size_m": 64, "rows": 2, "cols": 2 },
  "embeddings": { "dim": 8 },
  "filter": { "particles": 20, "process_noise_frac": 1000 },
  "init": { "mode": "exact" },
  "odometry_noise_frac": 0,
  "path": { "kind": "inline", "waypoints": [ {"x": 10, "y": 10}, {"x": 60, "y": 10}, {"x": 100, "y": 10} ] }
}"#,
    );
    let o = wag(&["--config", cfg.to_str().unwrap(), "run"], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
    assert!(!dir.path().join("summary.json").exists());
}

#[test]
fn report_emits_series_and_rejects_empty_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", SMALL_RUN);
    assert_eq!(code(&wag(&["--config", cfg.to_str().unwrap(), "run"], dir.path())), 0);
    let trace = dir.path().join("trace.csv");
    let o = wag(&["report", trace.to_str().unwrap(), "--threshold-m", "90"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let series = fs::read_to_string(dir.path().join("trace_series.csv")).unwrap();
    assert!(series.starts_with("step,error_m,dispersion_rms_m\n"));
    assert_eq!(series.lines().count(), 16);
    let report = json(&dir.path().join("trace_report.json"));
    let run = json(&dir.path().join("summary.json"));
    assert_eq!(report["summary"], run["summary"]);

    let empty = write(
        dir.path(),
        "empty.csv",
        "step,true_x,true_y,est_x,est_y,error_m,dispersion_rms_m,max_sim,argmax_row,argmax_col,ms\n",
    );
    assert_eq!(code(&wag(&["report", empty.to_str().unwrap()], dir.path())), 1);
}

#[test]
fn compare_reports_per_config_medians() {
    let dir = tempfile::tempdir().unwrap();
    let small = SMALL_RUN.replace("\"particles\": 3000", "\"particles\": 1000");
    let g = write(dir.path(), "gauss.json", &small);
    let e = write(
        dir.path(),
        "expo.json",
        &small.replace(r#"{ "kind": "gaussian", "sigma": 0.1 }"#, r#"{ "kind": "exponential", "beta": 5 }"#),
    );
    let o = wag(
        &["--config", g.to_str().unwrap(), "--config", e.to_str().unwrap(), "compare", "--seeds", "0..3"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("comparison.json"));
    let configs = r["configs"].as_array().unwrap();
    assert_eq!(configs.len(), 2);
    assert_eq!(configs[0]["label"], "gauss");
    assert_eq!(configs[1]["label"], "expo");
    for c in configs {
        assert_eq!(c["runs"].as_array().unwrap().len(), 3);
        assert!(c.get("median_final_error_m").is_some());
    }
}

#[test]
fn train_loss_with_zero_learning_rate_keeps_recall() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "train.json",
        r#"{ "train": { "lr": 0.0, "epochs": 2, "warmup_binomial_epochs": 1 }, "seeds": [1] }"#,
    );
    let o = wag(&["--config", cfg.to_str().unwrap(), "train-loss"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("train_loss.json"));
    for run in r["runs"].as_array().unwrap() {
        assert_eq!(run["recall_pos_at1"], run["initial"]["recall_pos_at1"]);
        assert_eq!(run["recall_semi_at1"], run["initial"]["recall_semi_at1"]);
    }
}

#[test]
fn bench_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = wag(
        &["bench", "--areas", "10,100,300", "--measure", "--num-images", "1000", "--repetitions", "3"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("bench_scaling.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let j = json(&dir.path().join("bench.json"));
    assert!((j["imagery_ratio_66m_vs_5m"].as_f64().unwrap() - 174.24).abs() < 1e-9);
    assert!(j["measurement"]["per_similarity_s"].as_f64().unwrap() > 0.0);
    assert_eq!(code(&wag(&["bench", "--dim", "0"], dir.path())), 1);
}

#[test]
fn calibrate_writes_result() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", SMALL_RUN);
    let o = wag(&["--config", cfg.to_str().unwrap(), "calibrate"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let c = json(&dir.path().join("calibration.json"));
    let s = c["calibration"]["achieved_sigma"].as_f64().unwrap();
    assert!((s / 0.1 - 1.0).abs() <= 0.1);
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["singapore.json", "chicago.json", "gaussian_64.json", "exponential_64.json"] {
        let text = fs::read_to_string(root.join(name)).unwrap();
        let cfg: wag_core::sim::ScenarioConfig = serde_json::from_str(&text).unwrap();
        cfg.validate().unwrap();
    }
}
