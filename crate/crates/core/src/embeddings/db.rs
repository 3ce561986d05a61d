use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dims, dot, normalize_f64, Embedding};
use crate::error::{Error, Result};
use crate::grid::{TileGrid, TileIndex};
use crate::rng::{stream, stream_rng};

/// Tiles per rayon task in the similarity kernel.
const TILE_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: u64 },
    Imported { manifest_id: String },
}

/// One unit embedding per tile, stored densely in row-major tile order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDb {
    grid: TileGrid,
    dim: usize,
    data: Vec<f32>,
    provenance: Provenance,
}

impl EmbeddingDb {
    /// Builds a database from raw row-major values. With `normalize` set each
    /// tile vector is scaled to unit length; otherwise the values must already
    /// be unit length within `1e-4`.
    pub fn from_values(
        grid: TileGrid,
        dim: usize,
        data: Vec<f32>,
        provenance: Provenance,
        normalize: bool,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        check_dims(grid.num_tiles() * dim, data.len())?;
        let mut db = EmbeddingDb {
            grid,
            dim,
            data,
            provenance,
        };
        for (i, row) in db.data.chunks_exact_mut(dim).enumerate() {
            if normalize {
                let unit = super::normalize(row)?;
                row.copy_from_slice(unit.as_slice());
            } else {
                let norm = row.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-4 {
                    return Err(Error::config(format!(
                        "tile {i} embedding has norm {norm}, expected 1"
                    )));
                }
            }
        }
        Ok(db)
    }

    pub fn grid(&self) -> &TileGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.num_tiles()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Raw row-major payload.
    pub fn values(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, linear: usize) -> &[f32] {
        &self.data[linear * self.dim..(linear + 1) * self.dim]
    }

    pub fn embedding(&self, k: TileIndex) -> Result<Embedding> {
        self.grid.check_index(k)?;
        Ok(Embedding::from_unit_unchecked(
            self.row(self.grid.linear(k)).to_vec(),
        ))
    }

    /// Sequential kernel: `out[k] = <db[k], g>` clamped to `[-1, 1]`.
    pub fn similarities_into(&self, g: &[f32], out: &mut [f32]) -> Result<()> {
        check_dims(self.dim, g.len())?;
        check_dims(self.len(), out.len())?;
        for (row, s) in self.data.chunks_exact(self.dim).zip(out.iter_mut()) {
            *s = dot(row, g).clamp(-1.0, 1.0);
        }
        Ok(())
    }

    /// Full similarity row against a ground embedding, computed in parallel
    /// over fixed tile chunks. Each entry is independent of the partitioning.
    pub fn similarity_row(&self, g: &Embedding) -> Result<SimilarityRow> {
        check_dims(self.dim, g.dim())?;
        let mut s = vec![0.0f32; self.len()];
        let stride = TILE_CHUNK * self.dim;
        s.par_chunks_mut(TILE_CHUNK)
            .zip(self.data.par_chunks(stride))
            .for_each(|(out, rows)| {
                for (row, v) in rows.chunks_exact(self.dim).zip(out.iter_mut()) {
                    *v = dot(row, g.as_slice()).clamp(-1.0, 1.0);
                }
            });
        Ok(SimilarityRow::from_values(&self.grid, s))
    }
}

/// Cosine similarities between one ground embedding and every tile.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRow {
    pub s: Vec<f32>,
    pub max_value: f32,
    pub argmax: TileIndex,
}

impl SimilarityRow {
    /// Ties resolve to the lowest row-major index.
    pub fn from_values(grid: &TileGrid, s: Vec<f32>) -> Self {
        assert_eq!(s.len(), grid.num_tiles(), "row length must match grid");
        let (best, max_value) = s
            .iter()
            .copied()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });
        SimilarityRow {
            argmax: grid.from_linear(best),
            max_value,
            s,
        }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// `max(s) - s[k]` per tile: the gap measurement.
    pub fn gaps(&self) -> Vec<f64> {
        let max = f64::from(self.max_value);
        self.s.iter().map(|&v| max - f64::from(v)).collect()
    }

    /// Euclidean embedding distance per tile, derived from the cosine
    /// similarity of unit vectors.
    pub fn distances(&self) -> Vec<f64> {
        self.s
            .iter()
            .map(|&v| super::unit_distance_from_cosine(f64::from(v)))
            .collect()
    }
}

/// Independent isotropic-Gaussian unit vector per tile, each drawn from its
/// own stream so the result is identical for any thread count.
pub fn synth_tile_db(grid: &TileGrid, dim: usize, seed: u64) -> Result<EmbeddingDb> {
    if dim < 2 {
        return Err(Error::config(format!(
            "embedding dimension must be at least 2, got {dim}"
        )));
    }
    let mut data = vec![0.0f32; grid.num_tiles() * dim];
    data.par_chunks_mut(dim)
        .enumerate()
        .try_for_each(|(i, row)| -> Result<()> {
            let mut rng = stream_rng(seed, stream::TILES, i as u64);
            let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            row.copy_from_slice(normalize_f64(&raw)?.as_slice());
            Ok(())
        })?;
    Ok(EmbeddingDb {
        grid: *grid,
        dim,
        data,
        provenance: Provenance::Synthetic { seed },
    })
}
