//! Dual-task supervision from sub-pixel masks.
//!
//! Each cell holds `subfactor²` sub-pixels (17 × 17 = 289 by default). The
//! regression label is the number of set sub-pixels, the density is that
//! count divided by 289, and the classification label is 1 whenever any
//! sub-pixel is set.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bif::{self, io_err, BifError, Sidecar};
use crate::grid::{Geometry, Grid, GridError};

/// Sub-pixels per cell edge.
pub const SUBFACTOR: usize = 17;

/// Sub-pixels per cell.
pub const SUBPIXELS_PER_CELL: u16 = (SUBFACTOR * SUBFACTOR) as u16;

/// Upper edges of the five density bins: {0}, (0,0.3], (0.3,0.6], (0.6,0.9], (0.9,1].
pub const DENSITY_BIN_EDGES: [f64; 4] = [0.3, 0.6, 0.9, 1.0];

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("mask is {sub_width}×{sub_height} sub-pixels, expected {expected_width}×{expected_height}")]
    DimensionMismatch { sub_width: usize, sub_height: usize, expected_width: usize, expected_height: usize },
    #[error("label geometries differ")]
    GeometryMismatch,
    #[error("no valid cells to summarize")]
    EmptyValidSet,
    #[error("mask sidecar lacks a subfactor")]
    MissingSubfactor,
    #[error(transparent)]
    Bif(#[from] BifError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Binary sub-pixel raster aligned to a parent cell grid, bit-packed row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SubpixelMask {
    geometry: Geometry,
    subfactor: usize,
    sub_width: usize,
    sub_height: usize,
    words: Vec<u64>,
}

impl SubpixelMask {
    /// Empty mask whose sub-pixel raster exactly covers `geometry`.
    pub fn empty(geometry: Geometry, subfactor: usize) -> Self {
        let sub_width = geometry.width * subfactor;
        let sub_height = geometry.height * subfactor;
        SubpixelMask {
            geometry,
            subfactor,
            sub_width,
            sub_height,
            words: vec![0; (sub_width * sub_height).div_ceil(64)],
        }
    }

    /// Mask from explicit sub-pixel dimensions; aggregation rejects
    /// dimensions that are not `subfactor` × the parent grid.
    pub fn from_bits(
        geometry: Geometry,
        subfactor: usize,
        sub_width: usize,
        sub_height: usize,
        bits: impl IntoIterator<Item = bool>,
    ) -> Self {
        let mut words = vec![0u64; (sub_width * sub_height).div_ceil(64)];
        for (i, bit) in bits.into_iter().take(sub_width * sub_height).enumerate() {
            if bit {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        SubpixelMask { geometry, subfactor, sub_width, sub_height, words }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn subfactor(&self) -> usize {
        self.subfactor
    }

    pub fn sub_dims(&self) -> (usize, usize) {
        (self.sub_width, self.sub_height)
    }

    pub fn get(&self, sub_row: usize, sub_col: usize) -> bool {
        let i = sub_row * self.sub_width + sub_col;
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, sub_row: usize, sub_col: usize, value: bool) {
        let i = sub_row * self.sub_width + sub_col;
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    /// Set bits in the linear bit range `[start, start + len)`.
    fn count_range(&self, start: usize, len: usize) -> u32 {
        let end = start + len;
        let mut count = 0;
        let mut i = start;
        while i < end {
            let word = i / 64;
            let lo = i % 64;
            let hi = (end - word * 64).min(64);
            let span = hi - lo;
            let mask = if span == 64 { u64::MAX } else { ((1u64 << span) - 1) << lo };
            count += (self.words[word] & mask).count_ones();
            i += span;
        }
        count
    }
}

/// Paired classification/regression labels for every cell of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPair {
    geometry: Geometry,
    count: Vec<u16>,
}

impl LabelPair {
    pub fn from_counts(geometry: Geometry, count: Vec<u16>) -> Result<Self, LabelError> {
        if count.len() != geometry.n_cells() {
            return Err(GridError::LengthMismatch {
                width: geometry.width,
                height: geometry.height,
                expected: geometry.n_cells(),
                got: count.len(),
            }
            .into());
        }
        assert!(count.iter().all(|&c| c <= SUBPIXELS_PER_CELL), "count exceeds 289");
        Ok(LabelPair { geometry, count })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Regression label `s_i`, number of set sub-pixels.
    pub fn count(&self) -> &[u16] {
        &self.count
    }

    pub fn cls(&self, cell: usize) -> u8 {
        u8::from(self.count[cell] > 0)
    }

    pub fn cls_labels(&self) -> Vec<u8> {
        (0..self.count.len()).map(|i| self.cls(i)).collect()
    }

    pub fn density(&self, cell: usize) -> f64 {
        self.count[cell] as f64 / SUBPIXELS_PER_CELL as f64
    }

    pub fn densities(&self) -> Vec<f64> {
        (0..self.count.len()).map(|i| self.density(i)).collect()
    }

    pub fn count_grid(&self, nodata: f32) -> Grid {
        let values = self.count.iter().map(|&c| c as f32).collect();
        Grid::new(self.geometry, nodata, values).expect("length checked")
    }

    pub fn density_grid(&self, nodata: f32) -> Grid {
        let values = (0..self.count.len()).map(|i| self.density(i) as f32).collect();
        Grid::new(self.geometry, nodata, values).expect("length checked")
    }

    pub fn cls_grid(&self, nodata: f32) -> Grid {
        let values = (0..self.count.len()).map(|i| self.cls(i) as f32).collect();
        Grid::new(self.geometry, nodata, values).expect("length checked")
    }
}

/// Counts set sub-pixels per cell window.
pub fn aggregate(mask: &SubpixelMask) -> Result<LabelPair, LabelError> {
    let g = mask.geometry;
    let s = mask.subfactor;
    if mask.sub_width != g.width * s || mask.sub_height != g.height * s {
        return Err(LabelError::DimensionMismatch {
            sub_width: mask.sub_width,
            sub_height: mask.sub_height,
            expected_width: g.width * s,
            expected_height: g.height * s,
        });
    }
    let mut count = vec![0u16; g.n_cells()];
    for row in 0..g.height {
        for col in 0..g.width {
            let mut c = 0u32;
            for sub_row in row * s..(row + 1) * s {
                c += mask.count_range(sub_row * mask.sub_width + col * s, s);
            }
            count[row * g.width + col] = c as u16;
        }
    }
    Ok(LabelPair { geometry: g, count })
}

/// Cell-wise max of both labels, for overlapping mask tiles.
pub fn merge_overlap(a: &LabelPair, b: &LabelPair) -> Result<LabelPair, LabelError> {
    if !a.geometry.same_layout(&b.geometry) {
        return Err(LabelError::GeometryMismatch);
    }
    let count = a.count.iter().zip(&b.count).map(|(&x, &y)| x.max(y)).collect();
    Ok(LabelPair { geometry: a.geometry, count })
}

/// Shares of valid cells in the five density bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityHistogram {
    pub zero: f64,
    pub low: f64,
    pub mid: f64,
    pub high: f64,
    pub full: f64,
}

impl DensityHistogram {
    pub fn shares(&self) -> [f64; 5] {
        [self.zero, self.low, self.mid, self.high, self.full]
    }
}

fn density_bin(count: u16) -> usize {
    if count == 0 {
        return 0;
    }
    let rho = count as f64 / SUBPIXELS_PER_CELL as f64;
    1 + DENSITY_BIN_EDGES.iter().position(|&e| rho <= e).unwrap_or(3)
}

pub fn density_histogram(labels: &LabelPair, valid: &[usize]) -> Result<DensityHistogram, LabelError> {
    if valid.is_empty() {
        return Err(LabelError::EmptyValidSet);
    }
    let mut bins = [0usize; 5];
    for &cell in valid {
        bins[density_bin(labels.count[cell])] += 1;
    }
    let n = valid.len() as f64;
    let s = bins.map(|b| b as f64 / n);
    Ok(DensityHistogram { zero: s[0], low: s[1], mid: s[2], high: s[3], full: s[4] })
}

/// Writes the mask as MSB-first packed bits (row-major over the sub-pixel
/// raster) with a BIF-style sidecar carrying `subfactor`.
pub fn write_mask(payload: &Path, mask: &SubpixelMask, nodata: f32) -> Result<(), LabelError> {
    if let Some(parent) = payload.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent)).map_err(LabelError::Bif)?;
    }
    let n = mask.sub_width * mask.sub_height;
    let mut bytes = vec![0u8; n.div_ceil(8)];
    for i in 0..n {
        if mask.words[i / 64] >> (i % 64) & 1 == 1 {
            bytes[i / 8] |= 0x80 >> (i % 8);
        }
    }
    fs::write(payload, bytes).map_err(io_err(payload)).map_err(LabelError::Bif)?;
    let g = mask.geometry;
    let sidecar = Sidecar {
        width: g.width,
        height: g.height,
        cell_size_m: g.cell_size_m,
        nodata,
        band_name: "subpixel_mask".into(),
        city_code: g.key.city,
        year: g.key.year,
        subfactor: Some(mask.subfactor),
        legend: None,
        imputed: None,
    };
    bif::write_sidecar(&bif::sidecar_path(payload), &sidecar).map_err(LabelError::Bif)
}

pub fn read_mask(payload: &Path) -> Result<SubpixelMask, LabelError> {
    let sidecar = bif::read_sidecar(&bif::sidecar_path(payload))?;
    let s = sidecar.subfactor.ok_or(LabelError::MissingSubfactor)?;
    let bytes = fs::read(payload).map_err(io_err(payload)).map_err(LabelError::Bif)?;
    let (sw, sh) = (sidecar.width * s, sidecar.height * s);
    let n = sw * sh;
    if bytes.len() != n.div_ceil(8) {
        return Err(
            BifError::PayloadSize { path: payload.to_path_buf(), expected: n.div_ceil(8), got: bytes.len() }.into()
        );
    }
    let bits = (0..n).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0);
    Ok(SubpixelMask::from_bits(sidecar.geometry(), s, sw, sh, bits))
}
