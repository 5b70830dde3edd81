//! Single-band raster grids, NoData handling, the 3×3 block partition and
//! window downsampling.
//!
//! A [`Grid`] is the raster currency of the crate: one band of float32 values
//! in row-major order, tagged with the city-year it belongs to. Cells equal to
//! the NoData sentinel (or non-finite) are never treated as observations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// NoData sentinel used by the embedding rasters.
pub const DEFAULT_NODATA: f32 = -9999.0;

/// Default cell edge length in meters.
pub const DEFAULT_CELL_SIZE_M: f64 = 10.0;

/// Number of block bands along each axis of the spatial partition.
pub const BLOCK_BANDS: usize = 3;

/// Number of spatial blocks (3×3).
pub const N_BLOCKS: usize = BLOCK_BANDS * BLOCK_BANDS;

/// Upper bound on the adaptive downsampling factor.
pub const MAX_DOWNSAMPLE_FACTOR: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("value buffer has {got} cells, expected {width}×{height} = {expected}")]
    LengthMismatch { width: usize, height: usize, expected: usize, got: usize },
    #[error("cell ({row}, {col}) outside {height}×{width} grid")]
    OutOfRange { row: usize, col: usize, height: usize, width: usize },
    #[error("downsampling factor must be ≥ 1, got {0}")]
    InvalidFactor(usize),
    #[error("grid geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("invalid city code {0:?}: expected three ASCII letters or digits")]
    InvalidCityCode(String),
}

/// Three-character city identifier (e.g. `PAK`).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CityCode([u8; 3]);

impl CityCode {
    pub fn as_str(&self) -> &str {
        // Constructed only from validated ASCII.
        std::str::from_utf8(&self.0).expect("city code is ASCII")
    }
}

impl FromStr for CityCode {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = s.as_bytes();
        if bytes.len() != 3 || !bytes.iter().all(|b| b.is_ascii_alphanumeric()) {
            return Err(GridError::InvalidCityCode(s.to_string()));
        }
        let mut code = [0u8; 3];
        for (dst, src) in code.iter_mut().zip(bytes) {
            *dst = src.to_ascii_uppercase();
        }
        Ok(CityCode(code))
    }
}

impl fmt::Display for CityCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for CityCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CityCode({})", self.as_str())
    }
}

impl Serialize for CityCode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CityCode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A (city, year) sample identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CityYear {
    pub city: CityCode,
    pub year: i32,
}

impl CityYear {
    pub fn new(city: CityCode, year: i32) -> Self {
        CityYear { city, year }
    }
}

impl fmt::Display for CityYear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.city, self.year)
    }
}

/// Shared raster geometry: dimensions, resolution and sample identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
    pub cell_size_m: f64,
    pub key: CityYear,
}

impl Geometry {
    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    /// Same raster layout; the city-year tag is not compared.
    pub fn same_layout(&self, other: &Geometry) -> bool {
        self.width == other.width && self.height == other.height && self.cell_size_m == other.cell_size_m
    }

    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }

    pub fn block_of_cell(&self, cell: usize) -> BlockId {
        let (row, col) = self.row_col(cell);
        // In range by construction.
        block_of(row, col, self.height, self.width).expect("cell inside grid")
    }
}

/// Single-band float raster with a NoData sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    geometry: Geometry,
    nodata: f32,
    values: Vec<f32>,
}

impl Grid {
    pub fn new(geometry: Geometry, nodata: f32, values: Vec<f32>) -> Result<Self, GridError> {
        let expected = geometry.n_cells();
        if values.len() != expected {
            return Err(GridError::LengthMismatch {
                width: geometry.width,
                height: geometry.height,
                expected,
                got: values.len(),
            });
        }
        Ok(Grid { geometry, nodata, values })
    }

    pub fn filled(geometry: Geometry, nodata: f32, value: f32) -> Self {
        let values = vec![value; geometry.n_cells()];
        Grid { geometry, nodata, values }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn key(&self) -> CityYear {
        self.geometry.key
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.geometry.width + col]
    }

    /// Finite and not the sentinel.
    pub fn is_valid(&self, cell: usize) -> bool {
        let v = self.values[cell];
        v.is_finite() && v != self.nodata
    }

    /// Boolean validity mask, one entry per cell.
    pub fn valid_mask(&self) -> Vec<bool> {
        (0..self.values.len()).map(|i| self.is_valid(i)).collect()
    }
}

/// Indices of all valid cells (exact comparison against the sentinel; NaN and
/// infinities are also excluded).
pub fn mask_nodata(grid: &Grid) -> Vec<usize> {
    (0..grid.values.len()).filter(|&i| grid.is_valid(i)).collect()
}

/// Position of a cell in the 3×3 block partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockId {
    pub row_band: u8,
    pub col_band: u8,
}

impl BlockId {
    pub fn from_bands(row_band: u8, col_band: u8) -> Self {
        debug_assert!((row_band as usize) < BLOCK_BANDS && (col_band as usize) < BLOCK_BANDS);
        BlockId { row_band, col_band }
    }

    pub fn from_index(index: u8) -> Self {
        BlockId::from_bands(index / BLOCK_BANDS as u8, index % BLOCK_BANDS as u8)
    }

    pub fn index(&self) -> u8 {
        self.row_band * BLOCK_BANDS as u8 + self.col_band
    }
}

/// Band `b` starts at `floor(b·extent/3)`; returns the last band whose start is ≤ `pos`.
fn band_of(pos: usize, extent: usize) -> u8 {
    (0..BLOCK_BANDS).rev().find(|&b| b * extent / BLOCK_BANDS <= pos).unwrap_or(0) as u8
}

pub fn block_of(row: usize, col: usize, height: usize, width: usize) -> Result<BlockId, GridError> {
    if row >= height || col >= width {
        return Err(GridError::OutOfRange { row, col, height, width });
    }
    Ok(BlockId::from_bands(band_of(row, height), band_of(col, width)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reducer {
    Mean,
    Max,
}

/// Reduces each `factor`×`factor` window over its valid cells. Windows with no
/// valid input become NoData. Cell size scales with the factor.
pub fn downsample(grid: &Grid, factor: usize, reducer: Reducer) -> Result<Grid, GridError> {
    if factor < 1 {
        return Err(GridError::InvalidFactor(factor));
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let (w, h) = (grid.width(), grid.height());
    let out_w = w.div_ceil(factor);
    let out_h = h.div_ceil(factor);
    let mut out = Vec::with_capacity(out_w * out_h);
    for orow in 0..out_h {
        for ocol in 0..out_w {
            let mut sum = 0.0f64;
            let mut max = f32::NEG_INFINITY;
            let mut n = 0usize;
            for r in orow * factor..((orow + 1) * factor).min(h) {
                for c in ocol * factor..((ocol + 1) * factor).min(w) {
                    let idx = r * w + c;
                    if grid.is_valid(idx) {
                        let v = grid.values[idx];
                        sum += v as f64;
                        max = max.max(v);
                        n += 1;
                    }
                }
            }
            out.push(match (n, reducer) {
                (0, _) => grid.nodata,
                (_, Reducer::Mean) => (sum / n as f64) as f32,
                (_, Reducer::Max) => max,
            });
        }
    }
    let geometry = Geometry {
        width: out_w,
        height: out_h,
        cell_size_m: grid.geometry.cell_size_m * factor as f64,
        key: grid.geometry.key,
    };
    Grid::new(geometry, grid.nodata, out)
}

/// Smallest factor `f` with `ceil(n_valid / f²) ≤ cap`, clamped to `[1, 8]`.
pub fn adaptive_factor(n_valid: usize, cap: usize) -> usize {
    assert!(cap > 0, "cell cap must be positive");
    (1..=MAX_DOWNSAMPLE_FACTOR).find(|f| n_valid.div_ceil(f * f) <= cap).unwrap_or(MAX_DOWNSAMPLE_FACTOR)
}
