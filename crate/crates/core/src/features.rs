//! Per-pixel feature vectors: embedding plus auxiliary categories, the C0–C5
//! combination codes, robust scaling and the cross-city variability statistic.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bif::{read_bif, BifError};
use crate::grid::{CityYear, Grid};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{category} block has {got} bands, expected {expected}")]
    WrongDim { category: Category, expected: usize, got: usize },
    #[error("combination {combo} needs the {category} block, which is absent")]
    MissingCategory { combo: ComboCode, category: Category },
    #[error("feature bands do not share one grid geometry")]
    GeometryMismatch,
    #[error("band {band} of {category} is NoData at cell {cell}")]
    NoDataInStack { category: Category, band: usize, cell: usize },
    #[error("robust scaling needs at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("scaler fitted on {fitted} features, applied to {got}")]
    WidthMismatch { fitted: usize, got: usize },
    #[error("need at least 2 city means, got {0}")]
    TooFewCities(usize),
    #[error("mean of city means is zero")]
    ZeroGlobalMean,
    #[error("unknown {kind} {value:?}")]
    Unknown { kind: &'static str, value: String },
    #[error("manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest {path}: {source}")]
    ManifestIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Bif(#[from] BifError),
}

/// Feature category, in stacking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "AEF")]
    Aef,
    #[serde(rename = "NTL")]
    Ntl,
    #[serde(rename = "RS")]
    Rs,
    #[serde(rename = "Spatial")]
    Spatial,
    #[serde(rename = "POI")]
    Poi,
}

impl Category {
    pub const ALL: [Category; 5] = [Category::Aef, Category::Ntl, Category::Rs, Category::Spatial, Category::Poi];

    pub fn dim(self) -> usize {
        match self {
            Category::Aef => 64,
            Category::Ntl => 18,
            Category::Rs => 3,
            Category::Spatial => 9,
            Category::Poi => 24,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Aef => "AEF",
            Category::Ntl => "NTL",
            Category::Rs => "RS",
            Category::Spatial => "Spatial",
            Category::Poi => "POI",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| FeatureError::Unknown { kind: "category", value: s.to_string() })
    }
}

/// Auxiliary-feature combination code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComboCode {
    C0,
    C1,
    C2,
    C3,
    C4,
    C5,
}

impl ComboCode {
    pub const ALL: [ComboCode; 6] =
        [ComboCode::C0, ComboCode::C1, ComboCode::C2, ComboCode::C3, ComboCode::C4, ComboCode::C5];

    pub fn categories(self) -> &'static [Category] {
        use Category::*;
        match self {
            ComboCode::C0 => &[Aef],
            ComboCode::C1 => &[Aef, Ntl],
            ComboCode::C2 => &[Aef, Rs],
            ComboCode::C3 => &[Aef, Spatial],
            ComboCode::C4 => &[Aef, Poi],
            ComboCode::C5 => &[Aef, Ntl, Rs, Spatial, Poi],
        }
    }

    pub fn total_dim(self) -> usize {
        self.categories().iter().map(|c| c.dim()).sum()
    }

    /// Report label used in per-city tables (`+NTL`, `+ALL`, ...).
    pub fn label(self) -> &'static str {
        match self {
            ComboCode::C0 => "AEF",
            ComboCode::C1 => "+NTL",
            ComboCode::C2 => "+RS",
            ComboCode::C3 => "+Spatial",
            ComboCode::C4 => "+POI",
            ComboCode::C5 => "+ALL",
        }
    }
}

impl fmt::Display for ComboCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

impl FromStr for ComboCode {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ComboCode::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| FeatureError::Unknown { kind: "combination code", value: s.to_string() })
    }
}

/// One category's bands over a shared grid.
#[derive(Debug, Clone)]
pub struct FeatureBlock {
    category: Category,
    bands: Vec<Grid>,
}

impl FeatureBlock {
    pub fn new(category: Category, bands: Vec<Grid>) -> Result<Self, FeatureError> {
        if bands.len() != category.dim() {
            return Err(FeatureError::WrongDim { category, expected: category.dim(), got: bands.len() });
        }
        if bands.windows(2).any(|w| !w[0].geometry().same_layout(w[1].geometry())) {
            return Err(FeatureError::GeometryMismatch);
        }
        Ok(FeatureBlock { category, bands })
    }

    pub fn category(&self) -> Category {
        self.category
    }

    pub fn bands(&self) -> &[Grid] {
        &self.bands
    }
}

/// Cells where every band of every block is valid.
pub fn valid_cells(blocks: &[FeatureBlock]) -> Vec<usize> {
    let Some(first) = blocks.first().and_then(|b| b.bands.first()) else {
        return Vec::new();
    };
    (0..first.geometry().n_cells())
        .filter(|&cell| blocks.iter().all(|b| b.bands.iter().all(|g| g.is_valid(cell))))
        .collect()
}

/// Concatenates AEF‖NTL‖RS‖Spatial‖POI (restricted to the combination's
/// categories) for each requested cell.
pub fn stack(blocks: &[FeatureBlock], combo: ComboCode, cells: &[usize]) -> Result<Array2<f64>, FeatureError> {
    let mut chosen = Vec::with_capacity(combo.categories().len());
    for &category in combo.categories() {
        let block =
            blocks.iter().find(|b| b.category == category).ok_or(FeatureError::MissingCategory { combo, category })?;
        chosen.push(block);
    }
    let reference = chosen[0].bands[0].geometry();
    if chosen.iter().any(|b| !b.bands[0].geometry().same_layout(reference)) {
        return Err(FeatureError::GeometryMismatch);
    }
    let mut out = Array2::zeros((cells.len(), combo.total_dim()));
    let mut col = 0;
    for block in chosen {
        for (band_idx, band) in block.bands.iter().enumerate() {
            for (row, &cell) in cells.iter().enumerate() {
                if !band.is_valid(cell) {
                    return Err(FeatureError::NoDataInStack { category: block.category, band: band_idx, cell });
                }
                out[[row, col]] = band.values()[cell] as f64;
            }
            col += 1;
        }
    }
    Ok(out)
}

/// Quantile by linear interpolation between order statistics of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Per-feature median and interquartile range fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustScaleParams {
    pub median: Vec<f64>,
    pub iqr: Vec<f64>,
}

impl RobustScaleParams {
    pub fn fit(rows: ArrayView2<f64>) -> Result<Self, FeatureError> {
        if rows.nrows() < 2 {
            return Err(FeatureError::TooFewRows(rows.nrows()));
        }
        let mut median = Vec::with_capacity(rows.ncols());
        let mut iqr = Vec::with_capacity(rows.ncols());
        let mut col: Vec<f64> = Vec::with_capacity(rows.nrows());
        for c in rows.axis_iter(Axis(1)) {
            col.clear();
            col.extend(c.iter().copied());
            col.sort_by(f64::total_cmp);
            median.push(quantile_sorted(&col, 0.5));
            iqr.push(quantile_sorted(&col, 0.75) - quantile_sorted(&col, 0.25));
        }
        Ok(RobustScaleParams { median, iqr })
    }

    fn divisor(&self, j: usize) -> f64 {
        if self.iqr[j] > 0.0 {
            self.iqr[j]
        } else {
            1.0
        }
    }

    pub fn apply(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>, FeatureError> {
        if rows.ncols() != self.median.len() {
            return Err(FeatureError::WidthMismatch { fitted: self.median.len(), got: rows.ncols() });
        }
        let mut out = rows.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, d) = (self.median[j], self.divisor(j));
            col.mapv_inplace(|x| (x - m) / d);
        }
        Ok(out)
    }

    /// Maps weights of a linear function of scaled inputs back to raw inputs:
    /// returns (raw weights, intercept shift).
    pub fn unscale_linear(&self, weights: &Array1<f64>) -> (Array1<f64>, f64) {
        let raw = Array1::from_iter(weights.iter().enumerate().map(|(j, w)| w / self.divisor(j)));
        let shift = -raw.iter().zip(&self.median).map(|(w, m)| w * m).sum::<f64>();
        (raw, shift)
    }
}

/// Population standard deviation of city means divided by their mean.
pub fn cross_city_cv(city_means: &[f64]) -> Result<f64, FeatureError> {
    if city_means.len() < 2 {
        return Err(FeatureError::TooFewCities(city_means.len()));
    }
    let n = city_means.len() as f64;
    let mean = city_means.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(FeatureError::ZeroGlobalMean);
    }
    let var = city_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// JSON listing, per category, the BIF band files of one city-year.
///
/// ```json
/// {"city_code": "PAK", "year": 2022,
///  "categories": {"AEF": ["aef/A00.bif", ...], "POI": [...]}}
/// ```
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureManifest {
    #[serde(flatten)]
    pub key: CityYear,
    pub categories: BTreeMap<Category, Vec<PathBuf>>,
}

impl FeatureManifest {
    pub fn read(path: &Path) -> Result<Self, FeatureError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| FeatureError::ManifestIo { path: path.to_path_buf(), source })?;
        let manifest: FeatureManifest = serde_json::from_str(&text)
            .map_err(|source| FeatureError::Manifest { path: path.to_path_buf(), source })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        for (&category, paths) in &self.categories {
            if paths.len() != category.dim() {
                return Err(FeatureError::WrongDim { category, expected: category.dim(), got: paths.len() });
            }
        }
        Ok(())
    }

    /// Loads every listed band, resolving relative paths against `base`.
    pub fn load(&self, base: &Path) -> Result<Vec<FeatureBlock>, FeatureError> {
        self.categories
            .iter()
            .map(|(&category, paths)| {
                let bands =
                    paths.iter().map(|p| read_bif(&base.join(p)).map(|(g, _)| g)).collect::<Result<Vec<_>, _>>()?;
                FeatureBlock::new(category, bands)
            })
            .collect()
    }
}
