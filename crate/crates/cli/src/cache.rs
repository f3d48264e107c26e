//! Content-addressed cache of assembled model matrices.

use std::path::{Path, PathBuf};

use oatomo::forward::build_model_matrix_with;
use oatomo::{DetectionGeometry, Exec, GridSpec, SparseModelMatrix};
use serde_json::json;
use sha2::{Digest, Sha256};

pub const CACHE_ENV: &str = "OATOMO_CACHE";
const DEFAULT_DIR: &str = ".oatomo-cache";

pub fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_DIR))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Key over everything that determines the matrix entries.
pub fn matrix_key(grid: &GridSpec, geom: &DetectionGeometry, arc_step_frac: f64) -> String {
    let doc = json!({ "format": "OAMM1", "grid": grid, "geometry": geom, "arc_step_frac": arc_step_frac });
    sha256_hex(doc.to_string().as_bytes())
}

/// Loads the matrix from the cache or builds (and stores) it.
pub fn model_matrix(
    grid: &GridSpec,
    geom: &DetectionGeometry,
    arc_step_frac: f64,
    use_cache: bool,
) -> anyhow::Result<SparseModelMatrix> {
    if !use_cache {
        return Ok(build_model_matrix_with(Exec::Parallel, grid, geom, arc_step_frac)?);
    }
    let dir = cache_dir();
    let path = dir.join(format!("{}.oamm", matrix_key(grid, geom, arc_step_frac)));
    if path.exists() {
        if let Ok(m) = SparseModelMatrix::read_from(&path) {
            if m.n_rows() == geom.n_rows() && m.n_cols() == grid.len() {
                return Ok(m);
            }
        }
    }
    let m = build_model_matrix_with(Exec::Parallel, grid, geom, arc_step_frac)?;
    store(&dir, &path, &m);
    Ok(m)
}

// a failed cache write only costs a rebuild next time
fn store(dir: &Path, path: &Path, m: &SparseModelMatrix) {
    if std::fs::create_dir_all(dir).is_ok() {
        let _ = m.write_to(path);
    }
}
