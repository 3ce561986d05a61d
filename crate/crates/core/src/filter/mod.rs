//! Monte Carlo localization over the tile grid.
//!
//! Particles carry a planar position and a weight. Each measurement update
//! looks up the tile under every particle, multiplies its weight by that
//! tile's likelihood, renormalizes, and (by default) resamples
//! systematically. Particles outside the grid cannot be matched to a tile and
//! get zero weight.
//!
//! Randomness comes from a filter-owned stream. `predict` draws one seed per
//! call and hands each fixed-size particle chunk its own derived stream, so
//! results are identical for any rayon thread count.

mod model;
mod resample;

pub use model::{Measurement, MeasurementModel};
pub use resample::{effective_sample_size, systematic_indices, ResamplePolicy};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GeoPoint, Offset, TileGrid};
use crate::rng::{stream, stream_rng, StreamRng};

const PREDICT_CHUNK: usize = 4096;
const MAX_INIT_REDRAWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: GeoPoint,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterOptions {
    pub model: MeasurementModel,
    #[serde(default)]
    pub resample: ResamplePolicy,
}

impl Default for MeasurementModel {
    fn default() -> Self {
        MeasurementModel::gaussian()
    }
}

impl FilterOptions {
    pub fn new(model: MeasurementModel) -> Self {
        FilterOptions {
            model,
            resample: ResamplePolicy::EveryUpdate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if let ResamplePolicy::EssBelow { fraction } = self.resample {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::config(format!(
                    "ESS resampling fraction must lie in (0, 1], got {fraction}"
                )));
            }
        }
        Ok(())
    }
}

/// What an update did, for tracing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateInfo {
    pub effective_sample_size: f64,
    pub resampled: bool,
}

#[derive(Debug, Clone)]
pub struct ParticleFilter {
    grid: TileGrid,
    options: FilterOptions,
    particles: Vec<Particle>,
    rng: StreamRng,
}

impl ParticleFilter {
    /// Equal-weight filter over explicit positions.
    pub fn from_positions(
        grid: TileGrid,
        options: FilterOptions,
        positions: Vec<GeoPoint>,
        seed: u64,
    ) -> Result<Self> {
        options.validate()?;
        if positions.is_empty() {
            return Err(Error::config("a particle filter needs at least one particle"));
        }
        let w = 1.0 / positions.len() as f64;
        Ok(ParticleFilter {
            grid,
            options,
            particles: positions
                .into_iter()
                .map(|position| Particle { position, weight: w })
                .collect(),
            rng: stream_rng(seed, stream::FILTER, 0),
        })
    }

    /// `n` particles from an isotropic Gaussian around `mean`. Draws that land
    /// outside the grid are redrawn a bounded number of times, then clamped.
    pub fn init_gaussian(
        grid: TileGrid,
        options: FilterOptions,
        n: usize,
        mean: GeoPoint,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::config(format!("init sigma must be positive, got {sigma}")));
        }
        if !mean.is_finite() {
            return Err(Error::config("init mean must be finite"));
        }
        let normal = Normal::new(0.0, sigma).expect("sigma checked");
        let mut rng = stream_rng(seed, stream::FILTER_INIT, 0);
        let positions = (0..n)
            .map(|_| {
                let mut p = mean;
                for _ in 0..MAX_INIT_REDRAWS {
                    p = GeoPoint::new(
                        mean.x + normal.sample(&mut rng),
                        mean.y + normal.sample(&mut rng),
                    );
                    if grid.contains(p) {
                        return p;
                    }
                }
                grid.clamp(p)
            })
            .collect();
        Self::from_positions(grid, options, positions, seed)
    }

    /// All particles at `p` plus isotropic Gaussian jitter (zero allowed).
    pub fn init_exact(
        grid: TileGrid,
        options: FilterOptions,
        n: usize,
        p: GeoPoint,
        jitter: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(jitter.is_finite() && jitter >= 0.0) {
            return Err(Error::config(format!("init jitter must be >= 0, got {jitter}")));
        }
        let mut rng = stream_rng(seed, stream::FILTER_INIT, 0);
        let positions = (0..n)
            .map(|_| {
                if jitter == 0.0 {
                    p
                } else {
                    let dx: f64 = StandardNormal.sample(&mut rng);
                    let dy: f64 = StandardNormal.sample(&mut rng);
                    GeoPoint::new(p.x + jitter * dx, p.y + jitter * dy)
                }
            })
            .collect();
        Self::from_positions(grid, options, positions, seed)
    }

    pub fn grid(&self) -> &TileGrid {
        &self.grid
    }

    pub fn options(&self) -> &FilterOptions {
        &self.options
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// Moves every particle by `odom` plus independent per-axis Gaussian noise
    /// with standard deviation `noise_frac * |odom|`.
    pub fn predict(&mut self, odom: Offset, noise_frac: f64) -> Result<()> {
        if !(noise_frac.is_finite() && noise_frac >= 0.0) {
            return Err(Error::config(format!("noise fraction must be >= 0, got {noise_frac}")));
        }
        let step_seed: u64 = self.rng.random();
        let sigma = noise_frac * odom.norm();
        self.particles
            .par_chunks_mut(PREDICT_CHUNK)
            .enumerate()
            .for_each(|(chunk, particles)| {
                let mut rng = stream_rng(step_seed, "predict", chunk as u64);
                for p in particles {
                    let (nx, ny) = if sigma > 0.0 {
                        let nx: f64 = StandardNormal.sample(&mut rng);
                        let ny: f64 = StandardNormal.sample(&mut rng);
                        (sigma * nx, sigma * ny)
                    } else {
                        (0.0, 0.0)
                    };
                    p.position = p.position + odom + Offset::new(nx, ny);
                }
            });
        Ok(())
    }

    /// Reweights particles by the likelihood of their tile's measurement value,
    /// renormalizes, then resamples according to the policy.
    ///
    /// Arithmetic is done in log space with the maximum subtracted before
    /// exponentiating; the stored weights are linear and sum to one.
    pub fn update(&mut self, meas: &Measurement) -> Result<UpdateInfo> {
        if meas.len() != self.grid.num_tiles() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.num_tiles(),
                actual: meas.len(),
            });
        }
        let model = self.options.model;
        let tile_ll: Vec<f64> = meas.values.iter().map(|&v| model.log_likelihood(v)).collect();
        let grid = self.grid;
        let mut log_w: Vec<f64> = self
            .particles
            .par_iter()
            .map(|p| match grid.linear_tile_of(p.position) {
                Some(k) if p.weight > 0.0 => p.weight.ln() + tile_ll[k],
                _ => f64::NEG_INFINITY,
            })
            .collect();
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Degenerate(if max.is_nan() {
                "non-finite measurement value".into()
            } else {
                "every particle has zero likelihood (all out of bounds or zero weight)".into()
            }));
        }
        log_w.par_iter_mut().for_each(|v| *v = (*v - max).exp());
        // Sequential sum: fixed reduction order.
        let total: f64 = log_w.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate(format!("weight total {total}")));
        }
        for (p, w) in self.particles.iter_mut().zip(&log_w) {
            p.weight = w / total;
        }

        let weights: Vec<f64> = self.particles.iter().map(|p| p.weight).collect();
        let ess = effective_sample_size(&weights);
        let resampled = match self.options.resample {
            ResamplePolicy::EveryUpdate => true,
            ResamplePolicy::EssBelow { fraction } => ess < fraction * self.len() as f64,
        };
        if resampled {
            self.resample();
        }
        Ok(UpdateInfo {
            effective_sample_size: ess,
            resampled,
        })
    }

    /// Systematic resampling with a single uniform phase; offspring get equal
    /// weights and the particle count is unchanged.
    pub fn resample(&mut self) {
        let n = self.len();
        let phase: f64 = self.rng.random();
        let weights: Vec<f64> = self.particles.iter().map(|p| p.weight).collect();
        let parents = systematic_indices(&weights, n, phase);
        let w = 1.0 / n as f64;
        self.particles = parents
            .into_iter()
            .map(|i| Particle {
                position: self.particles[i].position,
                weight: w,
            })
            .collect();
    }

    /// Weighted mean position.
    pub fn estimate(&self) -> GeoPoint {
        let (x, y) = self.particles.iter().fold((0.0, 0.0), |(x, y), p| {
            (x + p.weight * p.position.x, y + p.weight * p.position.y)
        });
        GeoPoint::new(x, y)
    }

    /// Root weighted mean squared distance of the particles from the estimate,
    /// in meters.
    pub fn dispersion(&self) -> f64 {
        let est = self.estimate();
        self.particles
            .iter()
            .map(|p| {
                let d = p.position - est;
                p.weight * (d.dx * d.dx + d.dy * d.dy)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Total weight per tile (row-major); mass outside the grid is dropped.
    pub fn tile_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.grid.num_tiles()];
        for p in &self.particles {
            if let Some(k) = self.grid.linear_tile_of(p.position) {
                mass[k] += p.weight;
            }
        }
        mass
    }
}
