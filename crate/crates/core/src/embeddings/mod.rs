//! Embedding vectors, the pairwise metrics the two measurement models use,
//! the per-tile database and its similarity row, and a synthetic oracle that
//! stands in for the Siamese network.

mod db;
mod io;
mod oracle;

pub use db::{synth_tile_db, EmbeddingDb, Provenance, SimilarityRow};
pub use io::{import_db, load_db, save_db, DbManifest, DB_FORMAT_VERSION};
pub use oracle::{calibrate, synth_ground_embedding, Calibration, OracleParams};

use crate::error::{Error, Result};

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    /// Wraps values that are already unit length (e.g. a database row).
    pub(crate) fn from_unit_unchecked(values: Vec<f32>) -> Self {
        Embedding(values)
    }
}

impl AsRef<[f32]> for Embedding {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

pub fn normalize(v: &[f32]) -> Result<Embedding> {
    let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(Embedding(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect()))
}

pub(crate) fn normalize_f64(v: &[f64]) -> Result<Embedding> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(Embedding(v.iter().map(|&x| (x / norm) as f32).collect()))
}

const LANES: usize = 8;

/// Dot product with eight independent accumulators so the loop vectorizes.
/// The reduction order is fixed, so results do not depend on how callers
/// partition work.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for i in 0..LANES {
            acc[i] += xa[i] * xb[i];
        }
    }
    let tail: f32 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    let lo = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let hi = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    (lo + hi) + tail
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: a,
            actual: b,
        })
    }
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f32> {
    check_dims(a.dim(), b.dim())?;
    Ok(dot(&a.0, &b.0).clamp(-1.0, 1.0))
}

pub fn euclidean_distance(a: &Embedding, b: &Embedding) -> Result<f32> {
    check_dims(a.dim(), b.dim())?;
    let sq: f32 = a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sq.sqrt())
}

/// Euclidean distance between two unit vectors with cosine similarity `s`.
#[inline]
pub fn unit_distance_from_cosine(s: f64) -> f64 {
    (2.0 - 2.0 * s).max(0.0).sqrt()
}
