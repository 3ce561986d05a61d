//! On-disk embedding database.
//!
//! A database is two files: a JSON manifest (the path the caller names) and a
//! sibling binary payload holding `rows * cols * dim` little-endian `f32`
//! values in row-major tile order. The manifest records the payload's SHA-256
//! so truncation or corruption is caught on load. Externally computed
//! embeddings can be ingested with [`import_db`] as long as they follow the
//! same layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbeddingDb, Provenance};
use crate::artifact::{sha256_hex, write_atomic, write_json_atomic};
use crate::error::{Error, Result};
use crate::grid::TileGrid;

pub const DB_FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbManifest {
    pub format_version: u32,
    pub grid: TileGrid,
    pub dim: usize,
    pub dtype: String,
    pub provenance: Provenance,
    /// Payload file name, relative to the manifest's directory.
    pub payload: String,
    /// `sha256:<hex>` of the payload bytes.
    pub checksum: String,
}

impl DbManifest {
    pub fn payload_path(&self, manifest_path: &Path) -> PathBuf {
        manifest_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&self.payload)
    }
}

fn payload_name(manifest_path: &Path) -> Result<String> {
    let stem = manifest_path
        .file_stem()
        .ok_or_else(|| Error::config(format!("{} is not a file path", manifest_path.display())))?;
    Ok(format!("{}.bin", stem.to_string_lossy()))
}

fn encode(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes payload then manifest, each atomically. Returns the manifest.
pub fn save_db(db: &EmbeddingDb, path: &Path) -> Result<DbManifest> {
    let payload = encode(db.values());
    let manifest = DbManifest {
        format_version: DB_FORMAT_VERSION,
        grid: *db.grid(),
        dim: db.dim(),
        dtype: DTYPE.to_string(),
        provenance: db.provenance().clone(),
        payload: payload_name(path)?,
        checksum: format!("sha256:{}", sha256_hex(&payload)),
    };
    write_atomic(&manifest.payload_path(path), &payload)?;
    write_json_atomic(path, &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<DbManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DbManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if manifest.format_version != DB_FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!(
                "unsupported format_version {} (expected {DB_FORMAT_VERSION})",
                manifest.format_version
            ),
        ));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::format(path, format!("unsupported dtype {:?}", manifest.dtype)));
    }
    Ok(manifest)
}

fn read_payload(path: &Path, manifest: &DbManifest) -> Result<Vec<f32>> {
    let payload_path = manifest.payload_path(path);
    let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    let expected = manifest.grid.num_tiles() * manifest.dim * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            &payload_path,
            format!(
                "payload holds {} bytes but manifest ({}x{} tiles, dim {}) requires {expected}",
                bytes.len(),
                manifest.grid.rows(),
                manifest.grid.cols(),
                manifest.dim
            ),
        ));
    }
    let actual = format!("sha256:{}", sha256_hex(&bytes));
    if actual != manifest.checksum {
        return Err(Error::Checksum {
            path: payload_path,
            expected: manifest.checksum.clone(),
            actual,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Strict load: the payload must already hold unit vectors.
pub fn load_db(path: &Path) -> Result<EmbeddingDb> {
    let manifest = read_manifest(path)?;
    let values = read_payload(path, &manifest)?;
    EmbeddingDb::from_values(manifest.grid, manifest.dim, values, manifest.provenance, false)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Lenient load for externally produced embeddings: each tile vector is
/// normalized and the result is tagged as imported from this manifest.
pub fn import_db(path: &Path) -> Result<EmbeddingDb> {
    let manifest = read_manifest(path)?;
    let values = read_payload(path, &manifest)?;
    let provenance = Provenance::Imported {
        manifest_id: manifest.checksum.clone(),
    };
    EmbeddingDb::from_values(manifest.grid, manifest.dim, values, provenance, true)
        .map_err(|e| Error::format(path, e.to_string()))
}
