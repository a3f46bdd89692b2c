//! Velocity snapshots: a raw little-endian binary plus a JSON sidecar.
//!
//! Binary layout: four `u64` header words `(n, n, components, step)`, then
//! each component as `n * n` row-major `f64` values (`y` rows, `x` columns).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::field::VelocityField;
use super::grid::Grid2D;
use crate::error::{DlnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub time: f64,
    pub theta: f64,
    pub k: f64,
    pub case: String,
    pub side_length: f64,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_snapshot(path: &Path, field: &VelocityField, step: u64, meta: &SnapshotMeta) -> Result<()> {
    let n = field.grid().n() as u64;
    let mut buf = Vec::with_capacity(32 + 16 * field.grid().len());
    for word in [n, n, 2, step] {
        buf.extend_from_slice(&word.to_le_bytes());
    }
    for comp in field.to_physical() {
        for v in comp {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| DlnError::Io(e.to_string()))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub struct Snapshot {
    pub field: VelocityField,
    pub step: u64,
    pub meta: SnapshotMeta,
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 32 {
        return Err(DlnError::Io("snapshot header truncated".into()));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().expect("8 bytes"));
    let (nx, ny, comps, step) = (word(0), word(1), word(2), word(3));
    if nx != ny || comps != 2 {
        return Err(DlnError::Io(format!("unsupported snapshot shape {nx}x{ny}x{comps}")));
    }
    let len = (nx * ny) as usize;
    if bytes.len() != 32 + 16 * len {
        return Err(DlnError::Io("snapshot payload size mismatch".into()));
    }
    let values: Vec<f64> = bytes[32..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let meta: SnapshotMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)
        .map_err(|e| DlnError::Io(e.to_string()))?;
    let grid: Arc<Grid2D> = Grid2D::new(nx as usize, meta.side_length)?;
    let field = VelocityField::from_physical(&grid, &values[..len], &values[len..])?;
    Ok(Snapshot { field, step, meta })
}
