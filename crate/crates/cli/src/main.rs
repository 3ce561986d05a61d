//! `wag`: build tile databases, calibrate the oracle, run and compare
//! localization scenarios, train the toy embedding, and emit scaling tables.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2 runtime
//! divergence (degenerate filter or diverged training), 3 I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use wag_core::artifact::{config_hash, write_atomic, write_json_atomic, TOOL_VERSION};
use wag_core::bench::{
    density_ratio, emit_scaling_table, manifest_bytes, measure_similarity_kernel, scaling_csv,
    CostModel, KernelBenchConfig, COARSE_RATIO_INTERVAL_M, DENSE_INTERVAL_M, PER_SIMILARITY_S,
};
use wag_core::embeddings::{calibrate, import_db, save_db, synth_tile_db};
use wag_core::grid::TileGrid;
use wag_core::loss::{
    train_toy_embedding, LossKind, LossParams, ToyDataset, ToyDatasetParams, TrainConfig,
    TrainReport,
};
use wag_core::rng::{derive_seed, stream};
use wag_core::sim::{
    compare_runs, summarize, ConvergenceRule, RunSummary, RunTrace, Scenario,
    ScenarioConfig,
};
use wag_core::Error;

const ARTIFACT_FORMAT_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "wag", version, about = "Wide-area ground-to-aerial geolocalization toolkit")]
struct Cli {
    /// Config file; `compare` accepts several.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel kernels.
    #[arg(long, global = true, env = "WAG_THREADS")]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a tile embedding database (synthetic or imported).
    BuildDb {
        /// Manifest path; defaults to `<out>/db.json`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit the oracle noise to a target gap spread.
    Calibrate,
    /// Run one scenario and write its trace and summary.
    Run,
    /// Run several scenario configs over a set of seeds.
    Compare {
        /// Seeds as `a..b` (half-open) or a comma-separated list.
        #[arg(long, default_value = "0..10")]
        seeds: String,
    },
    /// Train the toy two-branch embedding with binomial and trinomial losses.
    TrainLoss,
    /// Storage and computation scaling tables.
    Bench(BenchArgs),
    /// Summaries and plot-ready series from trace files.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Areas in km², comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "10,100,268.4,300")]
    areas: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Seconds per similarity for the analytic model.
    #[arg(long, default_value_t = PER_SIMILARITY_S)]
    per_sim_time: f64,
    /// Database image spacing in meters.
    #[arg(long, default_value_t = TileGrid::CHICAGO_TILE_M)]
    interval: f64,
    /// Also time the real similarity kernel.
    #[arg(long)]
    measure: bool,
    #[arg(long, default_value_t = 65_536)]
    num_images: usize,
    #[arg(long, default_value_t = 11)]
    repetitions: usize,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Trace CSV files.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, default_value_t = TileGrid::CHICAGO_TILE_M)]
    threshold_m: f64,
    #[arg(long)]
    sustained: bool,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Config(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(e) => match e {
                Error::Degenerate(_) | Error::Divergence { .. } => 2,
                Error::Io { .. } | Error::Checksum { .. } => 3,
                _ => 1,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Config(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    fs::create_dir_all(&cli.out).map_err(|e| Error::Io { path: cli.out.clone(), source: e })?;
    match &cli.command {
        Command::BuildDb { output } => build_db(cli, output.as_deref()),
        Command::Calibrate => calibrate_cmd(cli),
        Command::Run => run_cmd(cli),
        Command::Compare { seeds } => compare_cmd(cli, seeds),
        Command::TrainLoss => train_loss(cli),
        Command::Bench(args) => bench(cli, args),
        Command::Report(args) => report(cli, args),
    }
}

fn log(cli: &Cli, msg: impl AsRef<str>) {
    if cli.verbose {
        eprintln!("{}", msg.as_ref());
    }
}

fn single_config(cli: &Cli) -> CliResult<&Path> {
    match cli.config.as_slice() {
        [one] => Ok(one),
        [] => Err(CliError::Config("--config is required".into())),
        _ => Err(CliError::Config("this command takes exactly one --config".into())),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_scenario(cli: &Cli, path: &Path) -> CliResult<ScenarioConfig> {
    let mut cfg: ScenarioConfig = read_json(path)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Provenance block embedded in every JSON artifact.
#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    format_version: u32,
    tool_version: &'a str,
    config_hash: String,
    #[serde(flatten)]
    body: T,
}

fn artifact<T: Serialize>(hash: String, body: T) -> Artifact<'static, T> {
    Artifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        tool_version: TOOL_VERSION,
        config_hash: hash,
        body,
    }
}

/// Wall-clock details kept out of the reproducible artifacts.
#[derive(Serialize)]
struct RunMeta<'a> {
    format_version: u32,
    tool_version: &'a str,
    config_hash: String,
    command: &'a str,
    finished_unix_s: u64,
    wall_time_s: f64,
    threads: usize,
}

fn write_meta(cli: &Cli, name: &str, command: &str, hash: String, started: Instant) -> CliResult<()> {
    let meta = RunMeta {
        format_version: ARTIFACT_FORMAT_VERSION,
        tool_version: TOOL_VERSION,
        config_hash: hash,
        command,
        finished_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        wall_time_s: started.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
    };
    Ok(write_json_atomic(&cli.out.join(name), &meta)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DbBuildConfig {
    #[serde(default = "v1")]
    format_version: u32,
    grid: TileGrid,
    #[serde(default = "dim64")]
    dim: usize,
    #[serde(default)]
    seed: u64,
    /// Manifest of externally produced embeddings to normalize and re-save.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    import: Option<PathBuf>,
}

fn v1() -> u32 {
    1
}

fn dim64() -> usize {
    64
}

fn build_db(cli: &Cli, output: Option<&Path>) -> CliResult<()> {
    let path = single_config(cli)?;
    let mut cfg: DbBuildConfig = read_json(path)?;
    if cfg.format_version != 1 {
        return Err(CliError::Config(format!("unsupported format_version {}", cfg.format_version)));
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let db = match &cfg.import {
        Some(src) => {
            let src = path.parent().unwrap_or(Path::new(".")).join(src);
            let db = import_db(&src)?;
            if *db.grid() != cfg.grid {
                return Err(CliError::Config(format!(
                    "{} covers a {}x{} grid of {} m tiles; config expects {}x{} of {} m",
                    src.display(),
                    db.grid().rows(),
                    db.grid().cols(),
                    db.grid().tile_size(),
                    cfg.grid.rows(),
                    cfg.grid.cols(),
                    cfg.grid.tile_size()
                )));
            }
            db
        }
        None => synth_tile_db(&cfg.grid, cfg.dim, cfg.seed)?,
    };
    let out = output.map_or_else(|| cli.out.join("db.json"), Path::to_path_buf);
    let manifest = save_db(&db, &out)?;
    let payload = manifest.payload_path(&out);
    let size = |p: &Path| fs::metadata(p).map(|m| m.len()).map_err(|e| Error::Io { path: p.into(), source: e });
    let (payload_bytes, manifest_bytes) = (size(&payload)?, size(&out)?);
    println!("tiles: {}", db.len());
    println!("bytes: {} payload + {} manifest", payload_bytes, manifest_bytes);
    println!("checksum: {}", manifest.checksum);
    write_json_atomic(
        &out.with_extension("meta.json"),
        &artifact(config_hash(&cfg), serde_json::json!({ "checksum": manifest.checksum })),
    )?;
    Ok(())
}

fn calibrate_cmd(cli: &Cli) -> CliResult<()> {
    let cfg = load_scenario(cli, single_config(cli)?)?;
    let spec = cfg.embeddings.calibrate.unwrap_or_default();
    let db = cfg.build_db()?;
    log(cli, format!("calibrating against {} tiles", db.len()));
    let cal = calibrate(
        &db,
        &cfg.embeddings.oracle,
        spec.target_sigma,
        spec.samples,
        derive_seed(cfg.seed, stream::CALIBRATION, 0),
    )?;
    println!(
        "scale {:.4}: gap spread {:.4} (target {}) after {} evaluations",
        cal.scale, cal.achieved_sigma, cal.target_sigma, cal.evaluations
    );
    write_json_atomic(
        &cli.out.join("calibration.json"),
        &artifact(config_hash(&cfg), serde_json::json!({ "calibration": cal })),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryBody<'a> {
    seed: u64,
    summary: &'a RunSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibration: Option<&'a wag_core::embeddings::Calibration>,
}

fn run_cmd(cli: &Cli) -> CliResult<()> {
    let started = Instant::now();
    let cfg = load_scenario(cli, single_config(cli)?)?;
    let hash = config_hash(&cfg);
    let mut scenario = Scenario::prepare(&cfg)?;
    if let Some(c) = scenario.calibration() {
        log(cli, format!("oracle calibrated: scale {:.4}, spread {:.4}", c.scale, c.achieved_sigma));
    }
    let mut trace = RunTrace::default();
    let outcome = scenario.run_into(&mut trace);
    // The trace is flushed even when the filter degenerates part way.
    trace.write(&cli.out.join("trace.csv"))?;
    write_meta(cli, "run_meta.json", "run", hash.clone(), started)?;
    if let Err(e) = outcome {
        eprintln!("partial trace of {} steps written", trace.len());
        return Err(e.into());
    }
    let summary = scenario.summarize(&trace)?;
    write_json_atomic(
        &cli.out.join("summary.json"),
        &artifact(
            hash,
            SummaryBody {
                seed: cfg.seed,
                summary: &summary,
                calibration: scenario.calibration(),
            },
        ),
    )?;
    println!(
        "steps {}: average error {:.1} m, final error {:.1} m, convergence {}",
        summary.steps,
        summary.average_error_m,
        summary.final_error_m,
        summary
            .convergence_step
            .map_or("none".to_string(), |s| format!("at step {s}"))
    );
    Ok(())
}

fn parse_seeds(s: &str) -> CliResult<Vec<u64>> {
    let bad = || CliError::Config(format!("cannot parse seeds `{s}`"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<CliResult<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn compare_cmd(cli: &Cli, seeds: &str) -> CliResult<()> {
    let started = Instant::now();
    if cli.config.is_empty() {
        return Err(CliError::Config("compare needs at least one --config".into()));
    }
    let seeds = match cli.seed {
        Some(s) => vec![s],
        None => parse_seeds(seeds)?,
    };
    let cfgs = cli
        .config
        .iter()
        .map(|p| {
            let label = p.file_stem().map_or("config".into(), |s| s.to_string_lossy().into_owned());
            Ok((label, load_scenario(cli, p)?))
        })
        .collect::<CliResult<Vec<_>>>()?;
    log(cli, format!("{} configs x {} seeds", cfgs.len(), seeds.len()));
    let report = compare_runs(&cfgs, &seeds)?;
    let hash = config_hash(&cfgs);
    for c in &report.configs {
        println!(
            "{}: median average error {}, final error {}, convergence step {} ({}/{} converged)",
            c.label,
            fmt_opt(c.median_average_error_m, " m"),
            fmt_opt(c.median_final_error_m, " m"),
            fmt_opt(c.median_convergence_step, ""),
            c.converged_runs,
            c.runs.len()
        );
    }
    let body = serde_json::json!({ "seeds": report.seeds, "configs": report.configs });
    write_json_atomic(&cli.out.join("comparison.json"), &artifact(hash.clone(), body))?;
    write_meta(cli, "compare_meta.json", "compare", hash, started)
}

fn fmt_opt(v: Option<f64>, unit: &str) -> String {
    v.map_or("none".into(), |x| format!("{x:.1}{unit}"))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainLossConfig {
    #[serde(default = "v1")]
    format_version: u32,
    #[serde(default)]
    dataset: ToyDatasetParams,
    #[serde(default)]
    loss_params: LossParams,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default = "both_losses")]
    losses: Vec<LossKind>,
    #[serde(default = "default_train_seeds")]
    seeds: Vec<u64>,
}

fn both_losses() -> Vec<LossKind> {
    vec![LossKind::Binomial, LossKind::Trinomial]
}

fn default_train_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Serialize)]
struct LossSummary {
    loss: LossKind,
    median_recall_pos_at1: f64,
    median_recall_semi_at1: f64,
    median_initial_recall_semi_at1: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn train_loss(cli: &Cli) -> CliResult<()> {
    let mut cfg: TrainLossConfig = match cli.config.as_slice() {
        [] => serde_json::from_str("{}").expect("defaults parse"),
        _ => read_json(single_config(cli)?)?,
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if cfg.losses.is_empty() || cfg.seeds.is_empty() {
        return Err(CliError::Config("losses and seeds must be non-empty".into()));
    }
    let jobs: Vec<(LossKind, u64)> = cfg
        .losses
        .iter()
        .flat_map(|&l| cfg.seeds.iter().map(move |&s| (l, s)))
        .collect();
    let runs: Vec<TrainReport> = jobs
        .par_iter()
        .map(|&(loss, seed)| {
            let data = ToyDataset::generate(cfg.dataset, seed)?;
            train_toy_embedding(&data, &cfg.loss_params, &TrainConfig { loss, ..cfg.train }, seed)
        })
        .collect::<wag_core::Result<_>>()?;
    let summaries: Vec<LossSummary> = cfg
        .losses
        .iter()
        .map(|&loss| {
            let of = |f: fn(&TrainReport) -> f64| median(runs.iter().filter(|r| r.loss == loss).map(f).collect());
            LossSummary {
                loss,
                median_recall_pos_at1: of(|r| r.recall_pos_at1),
                median_recall_semi_at1: of(|r| r.recall_semi_at1),
                median_initial_recall_semi_at1: of(|r| r.initial.recall_semi_at1),
            }
        })
        .collect();
    for s in &summaries {
        println!(
            "{:?}: median recall@1 positive {:.3}, semi-positive {:.3} (initial semi {:.3})",
            s.loss, s.median_recall_pos_at1, s.median_recall_semi_at1, s.median_initial_recall_semi_at1
        );
    }
    write_json_atomic(
        &cli.out.join("train_loss.json"),
        &artifact(config_hash(&cfg), serde_json::json!({ "summary": summaries, "runs": runs })),
    )?;
    Ok(())
}

fn bench(cli: &Cli, args: &BenchArgs) -> CliResult<()> {
    let model = CostModel {
        per_similarity_s: args.per_sim_time,
        bytes_per_value: 4,
        dim: args.dim,
        sampling_interval_m: args.interval,
    };
    let rows = emit_scaling_table(&args.areas, &model)?;
    write_atomic(&cli.out.join("bench_scaling.csv"), &scaling_csv(&rows))?;
    let measurement = if args.measure {
        let cfg = KernelBenchConfig {
            threads: cli.threads.unwrap_or(1),
            ..KernelBenchConfig::new(args.dim, args.num_images, args.repetitions, cli.seed.unwrap_or(0))
        };
        let m = measure_similarity_kernel(&cfg)?;
        println!(
            "measured {:.3e} s per similarity ({:.3e}/s) on {} thread(s); row of {} in {:.4} s",
            m.per_similarity_s, m.similarities_per_s, cfg.threads, cfg.num_images, m.median_row_s
        );
        Some(m)
    } else {
        None
    };
    for r in &rows {
        println!(
            "{:>8.1} km²: {:>10} tiles {:>9.3} s | dense {:>12} images {:>10.1} s",
            r.area_km2, r.wag_images, r.wag_seconds, r.dense_images, r.dense_seconds
        );
    }
    let body = serde_json::json!({
        "model": model,
        "dense_interval_m": DENSE_INTERVAL_M,
        "manifest_bytes": manifest_bytes(rows[0].wag_images, args.dim),
        "imagery_ratio_66m_vs_5m": density_ratio(COARSE_RATIO_INTERVAL_M, DENSE_INTERVAL_M),
        "rows": rows,
        "measurement": measurement,
    });
    write_json_atomic(
        &cli.out.join("bench.json"),
        &artifact(config_hash(&(&model, &args.areas)), body),
    )?;
    Ok(())
}

fn report(cli: &Cli, args: &ReportArgs) -> CliResult<()> {
    let rule = if args.sustained {
        ConvergenceRule::Sustained
    } else {
        ConvergenceRule::FirstCrossing
    };
    if !(args.threshold_m.is_finite() && args.threshold_m > 0.0) {
        return Err(CliError::Config("--threshold-m must be positive".into()));
    }
    for path in &args.traces {
        let trace = RunTrace::read(path)?;
        let summary = summarize(&trace, args.threshold_m, rule)?;
        let stem = path.file_stem().map_or("trace".into(), |s| s.to_string_lossy().into_owned());
        let mut series = String::from("step,error_m,dispersion_rms_m\n");
        for r in &trace.records {
            series.push_str(&format!("{},{},{}\n", r.step, r.error_m, r.dispersion_rms_m));
        }
        write_atomic(&cli.out.join(format!("{stem}_series.csv")), series.as_bytes())?;
        let bytes = fs::read(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        write_json_atomic(
            &cli.out.join(format!("{stem}_report.json")),
            &artifact(
                config_hash(&(args.threshold_m, rule)),
                serde_json::json!({
                    "trace": path,
                    "trace_sha256": wag_core::artifact::sha256_hex(&bytes),
                    "summary": summary,
                }),
            ),
        )?;
        println!(
            "{}: {} steps, average {:.1} m, final {:.1} m, convergence {}",
            path.display(),
            summary.steps,
            summary.average_error_m,
            summary.final_error_m,
            summary.convergence_step.map_or("none".into(), |s| s.to_string())
        );
    }
    Ok(())
}
