//! Reference-label preparation: 30 m → 10 m resampling, class filtering,
//! class merging and the combined → eroded preprocessing chain.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::catalog::{ClassCatalog, RawMapping};
use crate::error::{Error, Result};
use crate::morphology::{erode_labels, remove_small_components};
use crate::UNKNOWN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelStage {
    /// Raw product codes.
    Raw,
    /// Internal codes after filtering and merging.
    Combined,
    /// Combined, boundary-eroded and cleaned of small components.
    CombinedEroded,
    /// Output of region growing.
    Refined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    pub id: String,
    pub codes: Array2<u8>,
    pub stage: LabelStage,
}

impl LabelGrid {
    pub fn new(id: impl Into<String>, codes: Array2<u8>, stage: LabelStage) -> Self {
        LabelGrid {
            id: id.into(),
            codes,
            stage,
        }
    }
}

/// Nearest-neighbour block replication: each coarse cell becomes a
/// `factor × factor` block.
pub fn resample_labels(coarse: &Array2<u8>, factor: usize) -> Result<Array2<u8>> {
    if factor == 0 {
        return Err(Error::Config("resample factor must be positive".into()));
    }
    let (h, w) = coarse.dim();
    Ok(Array2::from_shape_fn((h * factor, w * factor), |(i, j)| {
        coarse[(i / factor, j / factor)]
    }))
}

/// Per raw class statistics used to decide inclusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawClassStats {
    pub raw_code: u8,
    #[serde(default)]
    pub name: String,
    pub region_pixel_count: u64,
    #[serde(default)]
    pub validation_pixel_count: u64,
    pub is_crop: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InclusionThresholds {
    pub min_region_pixels: u64,
    pub min_validation_pixels: u64,
}

impl Default for InclusionThresholds {
    fn default() -> Self {
        InclusionThresholds {
            min_region_pixels: 1_000_000,
            min_validation_pixels: 100,
        }
    }
}

impl InclusionThresholds {
    /// Crops need both the pixel count and enough validation pixels;
    /// other classes only the pixel count.
    pub fn includes(&self, stats: &RawClassStats) -> bool {
        stats.region_pixel_count >= self.min_region_pixels
            && (!stats.is_crop || stats.validation_pixel_count >= self.min_validation_pixels)
    }
}

pub fn filter_classes(stats: &[RawClassStats], thresholds: InclusionThresholds) -> BTreeSet<u8> {
    stats
        .iter()
        .filter(|s| thresholds.includes(s))
        .map(|s| s.raw_code)
        .collect()
}

/// Raw codes that were not in the catalog, with pixel counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub absent_codes: BTreeMap<u8, u64>,
}

impl MergeReport {
    pub fn absorb(&mut self, other: &MergeReport) {
        for (&code, &n) in &other.absent_codes {
            *self.absent_codes.entry(code).or_default() += n;
        }
    }
}

/// Maps raw product codes to internal codes. A grid that is already past
/// the raw stage is returned unchanged.
pub fn merge_classes(grid: &LabelGrid, catalog: &ClassCatalog) -> (LabelGrid, MergeReport) {
    let mut report = MergeReport::default();
    if grid.stage != LabelStage::Raw {
        return (grid.clone(), report);
    }
    let table: Vec<u8> = (0..=255u8)
        .map(|raw| match catalog.map_raw(raw) {
            RawMapping::Class(c) => c,
            RawMapping::Unknown | RawMapping::Absent => UNKNOWN,
        })
        .collect();
    let codes = grid.codes.mapv(|raw| {
        if catalog.map_raw(raw) == RawMapping::Absent {
            *report.absent_codes.entry(raw).or_default() += 1;
        }
        table[raw as usize]
    });
    (
        LabelGrid::new(grid.id.clone(), codes, LabelStage::Combined),
        report,
    )
}

#[derive(Debug, Clone)]
pub struct PreparedLabels {
    pub combined: LabelGrid,
    pub eroded: LabelGrid,
    pub report: MergeReport,
}

/// merge → erode → remove small components.
pub fn preprocess_labels(
    raw: &LabelGrid,
    catalog: &ClassCatalog,
    max_component_size: usize,
) -> Result<PreparedLabels> {
    if raw.stage != LabelStage::Raw {
        return Err(Error::Contract(format!(
            "{} is at stage {:?}, expected raw labels",
            raw.id, raw.stage
        )));
    }
    let (combined, report) = merge_classes(raw, catalog);
    let cleaned = remove_small_components(&erode_labels(&combined.codes), max_component_size);
    let eroded = LabelGrid::new(raw.id.clone(), cleaned, LabelStage::CombinedEroded);
    Ok(PreparedLabels {
        combined,
        eroded,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_cell_becomes_block() {
        let out = resample_labels(&arr2(&[[7u8]]), 3).unwrap();
        assert_eq!(out, Array2::from_elem((3, 3), 7));
    }

    #[test]
    fn two_cells_stack_vertically() {
        let out = resample_labels(&arr2(&[[1u8], [2]]), 3).unwrap();
        assert_eq!(out.dim(), (6, 3));
        assert!(out
            .rows()
            .into_iter()
            .take(3)
            .all(|r| r.iter().all(|&v| v == 1)));
        assert!(out
            .rows()
            .into_iter()
            .skip(3)
            .all(|r| r.iter().all(|&v| v == 2)));
    }

    #[test]
    fn resample_matches_index_division() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coarse = Array2::from_shape_fn((10, 10), |_| rng.gen::<u8>());
        let fine = resample_labels(&coarse, 3).unwrap();
        assert_eq!(fine.dim(), (30, 30));
        for i in 0..30 {
            for j in 0..30 {
                assert_eq!(fine[(i, j)], coarse[(i / 3, j / 3)]);
            }
        }
    }

    fn stats(count: u64, validation: u64, crop: bool) -> RawClassStats {
        RawClassStats {
            raw_code: 1,
            name: String::new(),
            region_pixel_count: count,
            validation_pixel_count: validation,
            is_crop: crop,
        }
    }

    #[test]
    fn inclusion_rules() {
        let t = InclusionThresholds::default();
        assert!(t.includes(&stats(1_200_000, 150, true)));
        assert!(!t.includes(&stats(2_000_000, 80, true)));
        assert!(t.includes(&stats(1_500_000, 0, false)));
        assert!(!t.includes(&stats(999_999, 500, false)));
        assert!(t.includes(&stats(1_000_000, 100, true)));
    }

    #[test]
    fn merge_maps_through_catalog() {
        let cat = ClassCatalog::california();
        // 141 deciduous forest, 26 double crop, 250 absent, 3 rice.
        let raw = LabelGrid::new("g", arr2(&[[141u8, 26], [250, 3]]), LabelStage::Raw);
        let (combined, report) = merge_classes(&raw, &cat);
        assert_eq!(combined.stage, LabelStage::Combined);
        assert_eq!(
            combined.codes[(0, 0)],
            cat.code_of("Forests Combined").unwrap()
        );
        assert_eq!(combined.codes[(0, 1)], UNKNOWN);
        assert_eq!(combined.codes[(1, 0)], UNKNOWN);
        assert_eq!(combined.codes[(1, 1)], cat.code_of("Rice").unwrap());
        assert_eq!(report.absent_codes, BTreeMap::from([(250, 1)]));

        let (again, report) = merge_classes(&combined, &cat);
        assert_eq!(again, combined);
        assert!(report.absent_codes.is_empty());
    }

    #[test]
    fn preprocess_requires_raw_stage() {
        let cat = ClassCatalog::california();
        let g = LabelGrid::new("g", Array2::zeros((4, 4)), LabelStage::Combined);
        assert!(preprocess_labels(&g, &cat, 4).is_err());
    }

    #[test]
    fn preprocess_chain_on_one_field() {
        let cat = ClassCatalog::california();
        // 8×8 rice field: erosion strips the border, leaving a 6×6 core.
        let raw = LabelGrid::new("g", Array2::from_elem((8, 8), 3u8), LabelStage::Raw);
        let p = preprocess_labels(&raw, &cat, 4).unwrap();
        assert_eq!(p.eroded.stage, LabelStage::CombinedEroded);
        assert_eq!(p.eroded.codes.iter().filter(|&&c| c != UNKNOWN).count(), 36);
    }
}
