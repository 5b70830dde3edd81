//! On-disk dataset layout and in-memory corpora.
//!
//! A dataset directory holds `index.json` listing city-years; each entry points
//! at a feature manifest and optionally a sub-pixel mask and an aggregated
//! count raster:
//!
//! ```text
//! index.json
//! CAA_2020/features.json       category → band files
//! CAA_2020/AEF/AEF_00.bif ...
//! CAA_2020/mask.bin (+ .json)  packed sub-pixel mask
//! CAA_2020/counts.bif (+ .json) written by `slumscope labels`
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use slumscope_core::bif::{read_bif, write_bif, Sidecar};
use slumscope_core::features::{stack, valid_cells, ComboCode, FeatureBlock, FeatureManifest};
use slumscope_core::grid::{CityYear, DEFAULT_NODATA};
use slumscope_core::labels::{aggregate, read_mask, write_mask, LabelPair};
use slumscope_core::splits::SampleTable;

use crate::synth::World;

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    #[serde(flatten)]
    pub key: CityYear,
    pub features: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub entries: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let index: DatasetIndex = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let mut keys: Vec<CityYear> = index.entries.iter().map(|e| e.key).collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            bail!("{} lists a city-year twice", path.display());
        }
        Ok(index)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let path = dir.join(INDEX_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

fn entry_dir(key: CityYear) -> PathBuf {
    PathBuf::from(format!("{}_{}", key.city, key.year))
}

/// Writes `world` under `dir` and returns its index.
pub fn write_world(world: &World, dir: &Path) -> Result<DatasetIndex> {
    let mut index = DatasetIndex::default();
    for e in &world.entries {
        let rel = entry_dir(e.key);
        let mut categories = BTreeMap::new();
        for block in &e.blocks {
            let cat = block.category();
            let mut paths = Vec::with_capacity(cat.dim());
            for (b, grid) in block.bands().iter().enumerate() {
                let name = format!("{cat}_{b:02}");
                let band_rel = PathBuf::from(cat.name()).join(format!("{name}.bif"));
                write_bif(&dir.join(&rel).join(&band_rel), grid, &Sidecar::for_grid(grid, name))?;
                paths.push(band_rel);
            }
            categories.insert(cat, paths);
        }
        let manifest = FeatureManifest { key: e.key, categories };
        let features = rel.join("features.json");
        fs::write(dir.join(&features), serde_json::to_string_pretty(&manifest)? + "\n")?;
        let mask = match &e.mask {
            Some(m) => {
                let p = rel.join("mask.bin");
                write_mask(&dir.join(&p), m, DEFAULT_NODATA)?;
                Some(p)
            }
            None => None,
        };
        index.entries.push(IndexEntry { key: e.key, features, mask, counts: None });
    }
    fs::write(dir.join("world.json"), serde_json::to_string_pretty(&world.spec)? + "\n")?;
    index.write(dir)?;
    Ok(index)
}

/// Aggregates every mask into a count raster next to it and records it in the
/// index. Returns the label pairs produced.
pub fn build_labels(dir: &Path) -> Result<Vec<(CityYear, LabelPair)>> {
    let mut index = DatasetIndex::read(dir)?;
    let mut out = Vec::new();
    for e in &mut index.entries {
        let Some(mask_path) = &e.mask else { continue };
        let mask = read_mask(&dir.join(mask_path)).with_context(|| format!("reading mask for {}", e.key))?;
        let labels = aggregate(&mask)?;
        let grid = labels.count_grid(DEFAULT_NODATA);
        let rel = mask_path.with_file_name("counts.bif");
        write_bif(&dir.join(&rel), &grid, &Sidecar::for_grid(&grid, "subpixel_count"))?;
        e.counts = Some(rel);
        out.push((e.key, labels));
    }
    index.write(dir)?;
    Ok(out)
}

/// One city-year held in memory.
#[derive(Debug, Clone)]
pub struct Scene {
    pub key: CityYear,
    pub blocks: Vec<FeatureBlock>,
    pub labels: Option<LabelPair>,
}

/// All scenes of a dataset, ordered by city-year.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub scenes: BTreeMap<CityYear, Scene>,
}

impl Dataset {
    pub fn from_world(world: &World) -> Self {
        let scenes = world
            .entries
            .iter()
            .map(|e| {
                let labels = e.mask.as_ref().map(|m| aggregate(m).expect("generated mask is well-formed"));
                (e.key, Scene { key: e.key, blocks: e.blocks.clone(), labels })
            })
            .collect();
        Dataset { scenes }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index = DatasetIndex::read(dir)?;
        let mut scenes = BTreeMap::new();
        for e in &index.entries {
            let manifest_path = dir.join(&e.features);
            let manifest = FeatureManifest::read(&manifest_path)?;
            if manifest.key != e.key {
                bail!("{} describes {} but the index says {}", manifest_path.display(), manifest.key, e.key);
            }
            let base = manifest_path.parent().unwrap_or(dir);
            let blocks = manifest.load(base).with_context(|| format!("loading features of {}", e.key))?;
            let labels = match (&e.counts, &e.mask) {
                (Some(p), _) => {
                    let (grid, _) = read_bif(&dir.join(p))?;
                    let counts = grid.values().iter().map(|&v| if v == grid.nodata() { 0 } else { v as u16 }).collect();
                    Some(LabelPair::from_counts(*grid.geometry(), counts)?)
                }
                (None, Some(p)) => Some(aggregate(&read_mask(&dir.join(p))?)?),
                (None, None) => None,
            };
            scenes.insert(e.key, Scene { key: e.key, blocks, labels });
        }
        Ok(Dataset { scenes })
    }

    pub fn labeled_keys(&self) -> Vec<CityYear> {
        self.scenes.values().filter(|s| s.labels.is_some()).map(|s| s.key).collect()
    }

    /// Checks that every scene carries the categories `combo` needs.
    pub fn check_combo(&self, combo: ComboCode) -> Result<()> {
        for s in self.scenes.values() {
            for cat in combo.categories() {
                if !s.blocks.iter().any(|b| b.category() == *cat) {
                    bail!("{} lacks {cat} bands required by {combo}", s.key);
                }
            }
        }
        Ok(())
    }
}

/// Blocks of `scene` restricted to the categories of `combo`.
pub fn combo_blocks(scene: &Scene, combo: ComboCode) -> Vec<FeatureBlock> {
    scene.blocks.iter().filter(|b| combo.categories().contains(&b.category())).cloned().collect()
}

/// Sample table of one labeled scene over cells valid in every band of the combo.
pub fn scene_table(scene: &Scene, combo: ComboCode) -> Result<SampleTable> {
    let labels = scene.labels.as_ref().with_context(|| format!("{} has no labels", scene.key))?;
    let blocks = combo_blocks(scene, combo);
    let cells = valid_cells(&blocks);
    let x = stack(&blocks, combo, &cells)?;
    let geometry = *labels.geometry();
    Ok(SampleTable::from_labels(&geometry, x, cells, labels)?)
}

/// Labeled scenes as sample tables for one combo.
pub fn corpus(dataset: &Dataset, combo: ComboCode) -> Result<BTreeMap<CityYear, SampleTable>> {
    dataset.scenes.values().filter(|s| s.labels.is_some()).map(|s| Ok((s.key, scene_table(s, combo)?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_world, SyntheticWorldSpec};

    #[test]
    fn disk_round_trip_matches_memory() {
        let spec =
            SyntheticWorldSpec { cities: 1, width: 24, height: 24, unlabeled_years: vec![2022], ..Default::default() };
        let world = synth_world(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_world(&world, dir.path()).unwrap();
        let from_disk = Dataset::load(dir.path()).unwrap();
        let in_memory = Dataset::from_world(&world);
        assert_eq!(from_disk.labeled_keys(), in_memory.labeled_keys());
        for combo in [ComboCode::C0, ComboCode::C5] {
            let a = corpus(&from_disk, combo).unwrap();
            let b = corpus(&in_memory, combo).unwrap();
            assert_eq!(a, b);
        }
        let labels = build_labels(dir.path()).unwrap();
        assert_eq!(labels.len(), 2);
        let with_counts = Dataset::load(dir.path()).unwrap();
        assert_eq!(corpus(&with_counts, ComboCode::C0).unwrap(), corpus(&in_memory, ComboCode::C0).unwrap());
        assert!(DatasetIndex::read(dir.path()).unwrap().entries.iter().filter(|e| e.counts.is_some()).count() == 2);
    }
}
