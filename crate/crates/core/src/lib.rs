//! Core data model and statistics for dual-task (classification + sub-pixel
//! density) slum mapping evaluation on raster grids.

pub mod bif;
pub mod features;
pub mod grid;
pub mod labels;
pub mod metrics;
pub mod spatial;
pub mod splits;

pub use grid::{BlockId, CityCode, CityYear, Geometry, Grid};
