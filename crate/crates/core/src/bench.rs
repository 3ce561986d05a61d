//! Storage and computation scaling of tile-database localization.
//!
//! The analytic side counts images for a given area and sampling interval and
//! multiplies out seconds and bytes. The measured side times the real
//! similarity kernel over a seeded database.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::artifact::{config_hash, TOOL_VERSION};
use crate::embeddings::{normalize, synth_tile_db, DbManifest, Provenance, DB_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::grid::TileGrid;

/// Seconds per embedding-pair similarity in the reference system.
pub const PER_SIMILARITY_S: f64 = 1.9552e-5;
/// Street-level sampling of the dense baseline, in meters.
pub const DENSE_INTERVAL_M: f64 = 5.0;
/// Coarse spacing used when reproducing the imagery ratio.
pub const COARSE_RATIO_INTERVAL_M: f64 = 66.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub per_similarity_s: f64,
    pub bytes_per_value: usize,
    pub dim: usize,
    pub sampling_interval_m: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            per_similarity_s: PER_SIMILARITY_S,
            bytes_per_value: 4,
            dim: 64,
            sampling_interval_m: TileGrid::CHICAGO_TILE_M,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.per_similarity_s.is_finite() && self.per_similarity_s > 0.0) {
            return Err(Error::config("per_similarity_s must be positive"));
        }
        if self.bytes_per_value == 0 || self.dim == 0 {
            return Err(Error::config("bytes_per_value and dim must be positive"));
        }
        if !(self.sampling_interval_m.is_finite() && self.sampling_interval_m > 0.0) {
            return Err(Error::config("sampling_interval_m must be positive"));
        }
        Ok(())
    }
}

/// `ceil(area / interval^2)`. A relative slack of 1e-12 absorbs rounding in
/// decimal inputs, so 268.4 km² at 5 m gives exactly 10,736,000.
pub fn images_required(area_km2: f64, sampling_interval_m: f64) -> Result<u64> {
    if !(area_km2.is_finite() && area_km2 > 0.0) {
        return Err(Error::config(format!("area must be positive, got {area_km2}")));
    }
    if !(sampling_interval_m.is_finite() && sampling_interval_m > 0.0) {
        return Err(Error::config(format!(
            "sampling interval must be positive, got {sampling_interval_m}"
        )));
    }
    let ratio = area_km2 * 1e6 / (sampling_interval_m * sampling_interval_m);
    Ok((ratio * (1.0 - 1e-12)).ceil().max(1.0) as u64)
}

pub fn similarity_update_time(num_images: u64, model: &CostModel) -> f64 {
    num_images as f64 * model.per_similarity_s
}

/// Embedding payload bytes; manifest overhead is reported by
/// [`manifest_bytes`].
pub fn storage_bytes(num_images: u64, model: &CostModel) -> u64 {
    num_images * (model.dim * model.bytes_per_value) as u64
}

/// Size of the JSON manifest that accompanies a database payload.
pub fn manifest_bytes(num_images: u64, dim: usize) -> usize {
    let grid = TileGrid::square(TileGrid::CHICAGO_TILE_M, 1, num_images.max(1) as usize)
        .expect("positive grid");
    let manifest = DbManifest {
        format_version: DB_FORMAT_VERSION,
        grid,
        dim,
        dtype: "f32".into(),
        provenance: Provenance::Synthetic { seed: 0 },
        payload: "db.bin".into(),
        checksum: format!("sha256:{}", "0".repeat(64)),
    };
    serde_json::to_vec_pretty(&manifest).expect("manifest serializes").len() + 1
}

/// Ratio of image counts for equal area: `(coarse / dense)^2`.
pub fn density_ratio(coarse_interval_m: f64, dense_interval_m: f64) -> f64 {
    (coarse_interval_m / dense_interval_m).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub area_km2: f64,
    pub wag_images: u64,
    pub dense_images: u64,
    pub wag_seconds: f64,
    pub dense_seconds: f64,
    pub wag_bytes: u64,
    pub dense_bytes: u64,
}

/// One row per area: coarse tiles at the model's interval against a dense
/// 5 m baseline, both costed with the same model.
pub fn emit_scaling_table(areas_km2: &[f64], model: &CostModel) -> Result<Vec<ScalingRow>> {
    model.validate()?;
    if areas_km2.is_empty() {
        return Err(Error::config("scaling table needs at least one area"));
    }
    areas_km2
        .iter()
        .map(|&area_km2| {
            let wag_images = images_required(area_km2, model.sampling_interval_m)?;
            let dense_images = images_required(area_km2, DENSE_INTERVAL_M)?;
            Ok(ScalingRow {
                area_km2,
                wag_images,
                dense_images,
                wag_seconds: similarity_update_time(wag_images, model),
                dense_seconds: similarity_update_time(dense_images, model),
                wag_bytes: storage_bytes(wag_images, model),
                dense_bytes: storage_bytes(dense_images, model),
            })
        })
        .collect()
}

pub fn scaling_csv(rows: &[ScalingRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    w.into_inner().expect("in-memory writer")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelBenchConfig {
    pub dim: usize,
    pub num_images: usize,
    pub repetitions: usize,
    pub seed: u64,
    /// Rayon threads for the kernel; 1 unless parallel scaling is the point.
    pub threads: usize,
}

impl KernelBenchConfig {
    pub fn new(dim: usize, num_images: usize, repetitions: usize, seed: u64) -> Self {
        KernelBenchConfig {
            dim,
            num_images,
            repetitions,
            seed,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMeasurement {
    pub config: KernelBenchConfig,
    pub config_hash: String,
    pub tool_version: String,
    pub hardware: String,
    /// Median wall time of one full similarity row.
    pub median_row_s: f64,
    pub per_similarity_s: f64,
    pub similarities_per_s: f64,
    /// Median absolute deviation of the row time, relative to the median.
    pub relative_mad: f64,
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Times `similarity_row` over a seeded database of `num_images` tiles.
pub fn measure_similarity_kernel(cfg: &KernelBenchConfig) -> Result<KernelMeasurement> {
    if cfg.repetitions < 3 {
        return Err(Error::config(format!(
            "need at least 3 repetitions, got {}",
            cfg.repetitions
        )));
    }
    if cfg.num_images == 0 || cfg.threads == 0 {
        return Err(Error::config("num_images and threads must be positive"));
    }
    let grid = TileGrid::square(TileGrid::CHICAGO_TILE_M, 1, cfg.num_images)?;
    let db = synth_tile_db(&grid, cfg.dim, cfg.seed)?;
    let query: Vec<f32> = (0..cfg.dim).map(|i| ((i * 7 + 3) % 11) as f32 - 5.0).collect();
    let g = normalize(&query)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::config(e.to_string()))?;

    let mut times: Vec<f64> = pool.install(|| -> Result<Vec<f64>> {
        // Warm caches before timing.
        std::hint::black_box(db.similarity_row(&g)?);
        (0..cfg.repetitions)
            .map(|_| {
                let t = Instant::now();
                let row = db.similarity_row(&g)?;
                let dt = t.elapsed().as_secs_f64();
                std::hint::black_box(row);
                Ok(dt)
            })
            .collect()
    })?;
    let median_row_s = median(&mut times);
    let mut dev: Vec<f64> = times.iter().map(|t| (t - median_row_s).abs()).collect();
    let mad = median(&mut dev);
    let per_similarity_s = median_row_s / cfg.num_images as f64;
    Ok(KernelMeasurement {
        config: *cfg,
        config_hash: config_hash(cfg),
        tool_version: TOOL_VERSION.to_string(),
        hardware: hardware_descriptor(),
        median_row_s,
        per_similarity_s,
        similarities_per_s: 1.0 / per_similarity_s,
        relative_mad: if median_row_s > 0.0 { mad / median_row_s } else { 0.0 },
    })
}

/// CPU model (when the OS exposes it), architecture and logical core count.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{cpu}; {}-{}; {cores} logical cores",
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}
