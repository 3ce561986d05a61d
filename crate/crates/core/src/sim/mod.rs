//! End-to-end localization runs over a synthetic or imported tile database.
//!
//! A scenario fixes the grid, the embedding source, the filter, the initial
//! belief, the odometry noise and the ground-truth path. Every random draw
//! comes from a named sub-stream of the scenario's master seed, so two
//! scenarios that differ only in, say, the measurement model see the same
//! path, odometry and oracle embeddings.
//!
//! Per step `t` (counted from 1): predict with the odometry since the previous
//! waypoint (skipped at `t = 1`), synthesize the ground embedding at the true
//! position, compute the similarity row, update, and record a trace line.

mod compare;
mod path;
mod trace;

pub use compare::{compare_runs, ComparisonReport, ConfigComparison, RunRecord, COMPARISON_FORMAT_VERSION};
pub use path::{
    generate_path, read_waypoints, synth_odometry, GeoOrigin, Path, EARTH_RADIUS_M,
};
pub use trace::{summarize, ConvergenceRule, RunSummary, RunTrace, TraceRecord, TRACE_HEADER};

use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{
    calibrate, load_db, synth_ground_embedding, synth_tile_db, Calibration, EmbeddingDb,
    OracleParams,
};
use crate::error::{Error, Result};
use crate::filter::{FilterOptions, MeasurementModel, ParticleFilter, ResamplePolicy};
use crate::grid::{GeoPoint, Offset, TileGrid};
use crate::rng::{derive_seed, stream, stream_rng};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "format_v1")]
    pub format_version: u32,
    pub grid: TileGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo_origin: Option<GeoOrigin>,
    #[serde(default)]
    pub embeddings: EmbeddingSource,
    pub filter: FilterConfig,
    pub init: InitConfig,
    pub odometry_noise_frac: f64,
    pub path: PathSpec,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub seed: u64,
    /// Fill the trace `ms` column with wall-clock times. Off by default so
    /// traces are byte-reproducible.
    #[serde(default)]
    pub record_timing: bool,
}

fn format_v1() -> u32 {
    SCENARIO_FORMAT_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSource {
    /// Prebuilt database manifest; when absent a synthetic one is generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_path: Option<PathBuf>,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Seed for the synthetic database; defaults to the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_seed: Option<u64>,
    #[serde(default)]
    pub oracle: OracleParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate: Option<CalibrationSpec>,
}

fn default_dim() -> usize {
    64
}

impl Default for EmbeddingSource {
    fn default() -> Self {
        EmbeddingSource {
            db_path: None,
            dim: default_dim(),
            db_seed: None,
            oracle: OracleParams::default(),
            calibrate: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    #[serde(default = "default_target_sigma")]
    pub target_sigma: f64,
    #[serde(default = "default_calibration_samples")]
    pub samples: usize,
}

fn default_target_sigma() -> f64 {
    0.1
}

fn default_calibration_samples() -> usize {
    4000
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        CalibrationSpec {
            target_sigma: default_target_sigma(),
            samples: default_calibration_samples(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub particles: usize,
    #[serde(default)]
    pub model: MeasurementModel,
    #[serde(default)]
    pub resample: ResamplePolicy,
    /// Motion-model noise fraction; defaults to the odometry noise fraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_noise_frac: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    /// Isotropic Gaussian centered `offset_m` from the first true waypoint.
    /// The bearing is drawn from the seed unless given.
    Gaussian {
        offset_m: f64,
        sigma_m: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bearing_deg: Option<f64>,
    },
    /// Every particle at the first true waypoint, plus optional jitter.
    Exact {
        #[serde(default)]
        jitter_m: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathSpec {
    Generated {
        num_steps: usize,
        #[serde(default = "default_step_length")]
        step_length_m: f64,
        #[serde(default = "default_turn_sigma")]
        turn_sigma: f64,
    },
    File {
        path: PathBuf,
    },
    Inline {
        waypoints: Vec<GeoPoint>,
    },
}

fn default_step_length() -> f64 {
    250.0
}

fn default_turn_sigma() -> f64 {
    0.3
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Dispersion threshold; defaults to the tile size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_m: Option<f64>,
    #[serde(default)]
    pub rule: ConvergenceRule,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != SCENARIO_FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported scenario format_version {}",
                self.format_version
            )));
        }
        if self.embeddings.db_path.is_none() && self.embeddings.dim < 2 {
            return Err(Error::config("embedding dim must be at least 2"));
        }
        self.embeddings.oracle.validate()?;
        if let Some(c) = self.embeddings.calibrate {
            if !(c.target_sigma.is_finite() && c.target_sigma > 0.0) {
                return Err(Error::config("calibration target_sigma must be positive"));
            }
        }
        if self.filter.particles == 0 {
            return Err(Error::config("filter.particles must be positive"));
        }
        FilterOptions { model: self.filter.model, resample: self.filter.resample }.validate()?;
        for (name, v) in [
            ("odometry_noise_frac", Some(self.odometry_noise_frac)),
            ("filter.process_noise_frac", self.filter.process_noise_frac),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::config(format!("{name} must be >= 0, got {v}")));
                }
            }
        }
        match self.init {
            InitConfig::Gaussian { offset_m, sigma_m, bearing_deg } => {
                if !(offset_m.is_finite() && offset_m >= 0.0 && sigma_m.is_finite() && sigma_m > 0.0) {
                    return Err(Error::config("gaussian init needs offset_m >= 0 and sigma_m > 0"));
                }
                if bearing_deg.is_some_and(|b| !b.is_finite()) {
                    return Err(Error::config("init bearing_deg must be finite"));
                }
            }
            InitConfig::Exact { jitter_m } => {
                if !(jitter_m.is_finite() && jitter_m >= 0.0) {
                    return Err(Error::config("exact init jitter_m must be >= 0"));
                }
            }
        }
        if let Some(t) = self.convergence.threshold_m {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::config("convergence threshold_m must be positive"));
            }
        }
        Ok(())
    }

    pub fn threshold_m(&self) -> f64 {
        self.convergence.threshold_m.unwrap_or(self.grid.tile_size())
    }

    /// Makes relative file references absolute with respect to `base`,
    /// normally the directory holding the config file.
    pub fn resolve_paths(&mut self, base: &std::path::Path) {
        if let Some(p) = &mut self.embeddings.db_path {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let PathSpec::File { path } = &mut self.path {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn build_path(&self) -> Result<Path> {
        match &self.path {
            PathSpec::Generated { num_steps, step_length_m, turn_sigma } => {
                generate_path(&self.grid, *num_steps, *step_length_m, *turn_sigma, self.seed)
            }
            PathSpec::File { path } => read_waypoints(path, &self.grid, self.geo_origin),
            PathSpec::Inline { waypoints } => Path::new(&self.grid, waypoints.clone()),
        }
    }

    /// Loads or synthesizes the tile database.
    pub fn build_db(&self) -> Result<EmbeddingDb> {
        match &self.embeddings.db_path {
            Some(p) => {
                let db = load_db(p)?;
                if *db.grid() != self.grid {
                    return Err(Error::config(format!(
                        "database {} covers a different grid than the scenario",
                        p.display()
                    )));
                }
                Ok(db)
            }
            None => synth_tile_db(
                &self.grid,
                self.embeddings.dim,
                self.embeddings.db_seed.unwrap_or(self.seed),
            ),
        }
    }
}

/// A prepared run: database, calibrated oracle, path, odometry and filter.
#[derive(Debug, Clone)]
pub struct Scenario {
    cfg: ScenarioConfig,
    db: EmbeddingDb,
    oracle: OracleParams,
    calibration: Option<Calibration>,
    path: Path,
    odometry: Vec<Offset>,
    filter: ParticleFilter,
}

impl Scenario {
    pub fn prepare(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let db = cfg.build_db()?;
        let calibration = match cfg.embeddings.calibrate {
            Some(c) => Some(calibrate(
                &db,
                &cfg.embeddings.oracle,
                c.target_sigma,
                c.samples,
                derive_seed(seed, stream::CALIBRATION, 0),
            )?),
            None => None,
        };
        let oracle = calibration.map_or(cfg.embeddings.oracle, |c| c.params);
        let path = cfg.build_path()?;
        let odometry = synth_odometry(&path, cfg.odometry_noise_frac, seed)?;

        let options = FilterOptions {
            model: cfg.filter.model,
            resample: cfg.filter.resample,
        };
        let start = path.waypoints()[0];
        let filter = match cfg.init {
            InitConfig::Gaussian { offset_m, sigma_m, bearing_deg } => {
                let bearing = match bearing_deg {
                    Some(b) => b.to_radians(),
                    None => stream_rng(seed, stream::FILTER_INIT, 1)
                        .random_range(0.0..std::f64::consts::TAU),
                };
                let mean = start + Offset::new(offset_m * bearing.cos(), offset_m * bearing.sin());
                ParticleFilter::init_gaussian(cfg.grid, options, cfg.filter.particles, mean, sigma_m, seed)?
            }
            InitConfig::Exact { jitter_m } => {
                ParticleFilter::init_exact(cfg.grid, options, cfg.filter.particles, start, jitter_m, seed)?
            }
        };
        Ok(Scenario {
            cfg: cfg.clone(),
            db,
            oracle,
            calibration,
            path,
            odometry,
            filter,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn db(&self) -> &EmbeddingDb {
        &self.db
    }

    pub fn oracle(&self) -> &OracleParams {
        &self.oracle
    }

    pub fn calibration(&self) -> Option<&Calibration> {
        self.calibration.as_ref()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn odometry(&self) -> &[Offset] {
        &self.odometry
    }

    pub fn filter(&self) -> &ParticleFilter {
        &self.filter
    }

    /// Runs every step, appending to `trace` as it goes so a failed run
    /// leaves the completed steps behind.
    pub fn run_into(&mut self, trace: &mut RunTrace) -> Result<()> {
        let oracle_seed = self.oracle.clutter_seed.unwrap_or(self.cfg.seed);
        let process_noise = self
            .cfg
            .filter
            .process_noise_frac
            .unwrap_or(self.cfg.odometry_noise_frac);
        for (t, &truth) in self.path.waypoints().iter().enumerate() {
            let started = self.cfg.record_timing.then(Instant::now);
            if t > 0 {
                self.filter.predict(self.odometry[t - 1], process_noise)?;
            }
            let g = synth_ground_embedding(&self.db, truth, &self.oracle, oracle_seed, t as u64)?;
            let row = self.db.similarity_row(&g)?;
            let meas = self.filter.options().model.measurement(&row);
            self.filter.update(&meas)?;
            let est = self.filter.estimate();
            trace.records.push(TraceRecord {
                step: t + 1,
                true_x: truth.x,
                true_y: truth.y,
                est_x: est.x,
                est_y: est.y,
                error_m: est.distance(truth),
                dispersion_rms_m: self.filter.dispersion(),
                max_sim: row.max_value,
                argmax_row: row.argmax.row,
                argmax_col: row.argmax.col,
                ms: started.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3),
            });
        }
        Ok(())
    }

    pub fn summarize(&self, trace: &RunTrace) -> Result<RunSummary> {
        summarize(trace, self.cfg.threshold_m(), self.cfg.convergence.rule)
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(RunTrace, RunSummary)> {
    let mut scenario = Scenario::prepare(cfg)?;
    let mut trace = RunTrace::default();
    scenario.run_into(&mut trace)?;
    let summary = scenario.summarize(&trace)?;
    Ok((trace, summary))
}
