//! BIF raster container: little-endian float32 row-major values in `<name>.bif`
//! plus a JSON sidecar `<name>.json`.
//!
//! The sidecar carries `{width, height, cell_size_m, nodata, band_name,
//! city_code, year}`; optional keys (`subfactor`, `legend`, `imputed`) are used
//! by sub-pixel masks, LISA maps and full-scene outputs respectively.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CityCode, CityYear, Geometry, Grid, GridError};

#[derive(Debug, Error)]
pub enum BifError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed sidecar {path}: {source}")]
    Sidecar {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("payload {path} has {got} bytes, expected {expected}")]
    PayloadSize { path: PathBuf, expected: usize, got: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub width: usize,
    pub height: usize,
    pub cell_size_m: f64,
    pub nodata: f32,
    pub band_name: String,
    pub city_code: CityCode,
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subfactor: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legend: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imputed: Option<bool>,
}

impl Sidecar {
    pub fn for_grid(grid: &Grid, band_name: impl Into<String>) -> Self {
        let g = grid.geometry();
        Sidecar {
            width: g.width,
            height: g.height,
            cell_size_m: g.cell_size_m,
            nodata: grid.nodata(),
            band_name: band_name.into(),
            city_code: g.key.city,
            year: g.key.year,
            subfactor: None,
            legend: None,
            imputed: None,
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            width: self.width,
            height: self.height,
            cell_size_m: self.cell_size_m,
            key: CityYear::new(self.city_code, self.year),
        }
    }
}

/// Sidecar path for a payload path (`x.bif` → `x.json`).
pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BifError + '_ {
    move |source| BifError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<(), BifError> {
    let json = serde_json::to_string_pretty(sidecar)
        .map_err(|source| BifError::Sidecar { path: path.to_path_buf(), source })?;
    fs::write(path, json + "\n").map_err(io_err(path))
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar, BifError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| BifError::Sidecar { path: path.to_path_buf(), source })
}

/// Writes `grid` to `payload` and its sidecar next to it.
pub fn write_bif(payload: &Path, grid: &Grid, sidecar: &Sidecar) -> Result<(), BifError> {
    if let Some(parent) = payload.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut bytes = Vec::with_capacity(grid.values().len() * 4);
    for v in grid.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(payload, bytes).map_err(io_err(payload))?;
    write_sidecar(&sidecar_path(payload), sidecar)
}

pub fn read_bif(payload: &Path) -> Result<(Grid, Sidecar), BifError> {
    let sidecar = read_sidecar(&sidecar_path(payload))?;
    let bytes = fs::read(payload).map_err(io_err(payload))?;
    let expected = sidecar.width * sidecar.height * 4;
    if bytes.len() != expected {
        return Err(BifError::PayloadSize { path: payload.to_path_buf(), expected, got: bytes.len() });
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let grid = Grid::new(sidecar.geometry(), sidecar.nodata, values)?;
    Ok((grid, sidecar))
}
