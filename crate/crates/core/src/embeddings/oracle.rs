//! Synthetic ground-embedding oracle.
//!
//! The network is replaced by a generative model of its output statistics:
//! the ground embedding at a true position is the true tile's embedding scaled
//! by a noisy overlap weight plus isotropic clutter,
//!
//! ```text
//! g = normalize(w * db[k*] + noise_scale / sqrt(D) * n),   n ~ N(0, I_D)
//! w = base_overlap + sigma_class * e,                     e ~ N(0, 1)
//! ```
//!
//! where `sigma_class` is `sigma_pos` or `sigma_semi` depending on where the
//! point sits inside its tile. [`calibrate`] scales the three noise terms
//! together until the spread of the gap `z = max(s) - s[k*]` hits a target.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{normalize_f64, EmbeddingDb, Embedding};
use crate::error::{Error, Result};
use crate::grid::{GeoPoint, PairClass};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub sigma_pos: f64,
    pub sigma_semi: f64,
    pub base_overlap: f64,
    /// Norm of the clutter vector added to the scaled tile embedding.
    pub noise_scale: f64,
    /// Seed for the per-step ground-embedding draws; when absent the
    /// scenario master seed is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clutter_seed: Option<u64>,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            sigma_pos: 0.15,
            sigma_semi: 0.3,
            base_overlap: 0.8,
            noise_scale: 1.2,
            clutter_seed: None,
        }
    }
}

impl OracleParams {
    pub fn validate(&self) -> Result<()> {
        let scales = [
            ("sigma_pos", self.sigma_pos),
            ("sigma_semi", self.sigma_semi),
            ("noise_scale", self.noise_scale),
        ];
        for (name, v) in scales {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("oracle {name} must be >= 0, got {v}")));
            }
        }
        if !(self.base_overlap > 0.0 && self.base_overlap <= 1.0) {
            return Err(Error::config(format!(
                "oracle base_overlap must lie in (0, 1], got {}",
                self.base_overlap
            )));
        }
        Ok(())
    }

    /// Multiplies every noise term by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        OracleParams {
            sigma_pos: self.sigma_pos * factor,
            sigma_semi: self.sigma_semi * factor,
            noise_scale: self.noise_scale * factor,
            ..*self
        }
    }
}

/// Deterministic in `(seed, step)`.
pub fn synth_ground_embedding(
    db: &EmbeddingDb,
    true_p: GeoPoint,
    params: &OracleParams,
    seed: u64,
    step: u64,
) -> Result<Embedding> {
    let grid = db.grid();
    let k = grid.tile_of(true_p)?;
    let sigma = match grid.classify_pair(k, true_p)? {
        PairClass::Positive => params.sigma_pos,
        _ => params.sigma_semi,
    };
    let mut rng = stream_rng(seed, stream::ORACLE, step);
    let e: f64 = StandardNormal.sample(&mut rng);
    let w = params.base_overlap + sigma * e;
    let clutter = params.noise_scale / (db.dim() as f64).sqrt();
    let tile = db.row(grid.linear(k));
    let g: Vec<f64> = tile
        .iter()
        .map(|&t| {
            let n: f64 = StandardNormal.sample(&mut rng);
            w * f64::from(t) + clutter * n
        })
        .collect();
    normalize_f64(&g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: OracleParams,
    /// Multiplier applied to the input noise terms.
    pub scale: f64,
    /// Sample standard deviation of the gap at the returned parameters.
    pub achieved_sigma: f64,
    pub target_sigma: f64,
    pub samples: usize,
    pub evaluations: usize,
}

pub const MIN_CALIBRATION_SAMPLES: usize = 1000;

/// Sample standard deviation of `z = max(s) - s[k*]` over `samples` uniform
/// in-bounds points. Draws are common across calls with the same seed, so the
/// statistic is a smooth function of the parameters.
pub fn gap_spread(db: &EmbeddingDb, params: &OracleParams, samples: usize, seed: u64) -> Result<f64> {
    let gaps = sample_gaps(db, params, samples, seed)?;
    Ok(sample_std(&gaps))
}

pub(crate) fn sample_gaps(
    db: &EmbeddingDb,
    params: &OracleParams,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grid = *db.grid();
    (0..samples)
        .into_par_iter()
        .map_init(
            || vec![0.0f32; db.len()],
            |row, i| {
                let mut rng = stream_rng(seed, stream::CALIBRATION, i as u64);
                let u: f64 = rand::Rng::random(&mut rng);
                let v: f64 = rand::Rng::random(&mut rng);
                let p = grid.clamp(GeoPoint::new(
                    grid.origin().x + u * grid.width(),
                    grid.origin().y + v * grid.height(),
                ));
                let g = synth_ground_embedding(db, p, params, seed, i as u64)?;
                db.similarities_into(g.as_slice(), row)?;
                let truth = row[grid.linear(grid.tile_of(p)?)];
                let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                Ok(f64::from(max) - f64::from(truth))
            },
        )
        .collect()
}

pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

const SCALE_MIN: f64 = 1e-3;
const SCALE_MAX: f64 = 1e3;
const ACCEPT_REL: f64 = 0.10;
const STOP_REL: f64 = 0.02;
const MAX_BISECTIONS: usize = 40;

/// Searches for a common multiplier on the noise terms of `params` that puts
/// the gap spread within 10% of `target_sigma`.
///
/// The multiplier is bracketed by doubling or halving from 1 (bounded to
/// `[1e-3, 1e3]`), then bisected in log space, stopping once the spread is
/// within 2% of target. Every evaluation reuses the same seeded draws.
pub fn calibrate(
    db: &EmbeddingDb,
    params: &OracleParams,
    target_sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<Calibration> {
    params.validate()?;
    if samples < MIN_CALIBRATION_SAMPLES {
        return Err(Error::config(format!(
            "calibration needs at least {MIN_CALIBRATION_SAMPLES} samples, got {samples}"
        )));
    }
    if !(target_sigma.is_finite() && target_sigma > 0.0) {
        return Err(Error::CalibrationFailed(format!(
            "target spread {target_sigma} is below the oracle noise floor"
        )));
    }

    let mut evaluations = 0;
    let mut eval = |scale: f64| -> Result<f64> {
        evaluations += 1;
        gap_spread(db, &params.scaled(scale), samples, seed)
    };
    let close = |s: f64, rel: f64| (s - target_sigma).abs() <= rel * target_sigma;

    let mut scale = 1.0;
    let mut spread = eval(scale)?;
    let (mut lo, mut hi);
    if spread < target_sigma {
        lo = (scale, spread);
        loop {
            if close(spread, STOP_REL) {
                return finish(params, scale, spread, target_sigma, samples, evaluations);
            }
            scale *= 2.0;
            if scale > SCALE_MAX {
                return Err(Error::CalibrationFailed(format!(
                    "gap spread saturates at {spread:.4} below target {target_sigma}"
                )));
            }
            spread = eval(scale)?;
            if spread >= target_sigma {
                hi = (scale, spread);
                break;
            }
            lo = (scale, spread);
        }
    } else {
        hi = (scale, spread);
        loop {
            if close(spread, STOP_REL) {
                return finish(params, scale, spread, target_sigma, samples, evaluations);
            }
            scale /= 2.0;
            if scale < SCALE_MIN {
                return Err(Error::CalibrationFailed(format!(
                    "gap spread stays at {spread:.4} above target {target_sigma}"
                )));
            }
            spread = eval(scale)?;
            if spread <= target_sigma {
                lo = (scale, spread);
                break;
            }
            hi = (scale, spread);
        }
    }

    let mut best = if (lo.1 - target_sigma).abs() < (hi.1 - target_sigma).abs() {
        lo
    } else {
        hi
    };
    for _ in 0..MAX_BISECTIONS {
        if close(best.1, STOP_REL) {
            break;
        }
        let mid = (lo.0 * hi.0).sqrt();
        let s = eval(mid)?;
        if s < target_sigma {
            lo = (mid, s);
        } else {
            hi = (mid, s);
        }
        if (s - target_sigma).abs() < (best.1 - target_sigma).abs() {
            best = (mid, s);
        }
    }
    if !close(best.1, ACCEPT_REL) {
        return Err(Error::CalibrationFailed(format!(
            "closest spread {:.4} at scale {:.4} misses target {target_sigma} by more than 10%",
            best.1, best.0
        )));
    }
    finish(params, best.0, best.1, target_sigma, samples, evaluations)
}

fn finish(
    params: &OracleParams,
    scale: f64,
    achieved_sigma: f64,
    target_sigma: f64,
    samples: usize,
    evaluations: usize,
) -> Result<Calibration> {
    Ok(Calibration {
        params: params.scaled(scale),
        scale,
        achieved_sigma,
        target_sigma,
        samples,
        evaluations,
    })
}
