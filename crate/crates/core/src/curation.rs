//! Grid acceptance by known-pixel and crop-pixel fractions.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::catalog::ClassCatalog;
use crate::error::{Error, Result};
use crate::grid::GridId;
use crate::UNKNOWN;

/// Pixel counts of one grid's combined-eroded labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLabelStats {
    pub grid: GridId,
    pub total: u64,
    /// Count per internal code, index 0 = unknown.
    pub class_counts: Vec<u64>,
    pub crop: u64,
}

impl GridLabelStats {
    pub fn compute(grid: GridId, codes: &Array2<u8>, catalog: &ClassCatalog) -> Result<Self> {
        let k = catalog.num_classes();
        let mut class_counts = vec![0u64; k + 1];
        for &c in codes {
            let slot = class_counts.get_mut(c as usize).ok_or_else(|| {
                Error::Contract(format!(
                    "{grid}: label code {c} outside the catalog (K = {k})"
                ))
            })?;
            *slot += 1;
        }
        let crop_table = catalog.crop_table();
        let crop = class_counts
            .iter()
            .zip(&crop_table)
            .filter(|(_, &is_crop)| is_crop)
            .map(|(n, _)| n)
            .sum();
        Ok(GridLabelStats {
            grid,
            total: codes.len() as u64,
            class_counts,
            crop,
        })
    }

    pub fn known(&self) -> u64 {
        self.total
            - self
                .class_counts
                .get(UNKNOWN as usize)
                .copied()
                .unwrap_or(0)
    }

    pub fn known_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.known() as f64 / self.total as f64
        }
    }

    /// Crop pixels as a share of known pixels.
    pub fn crop_fraction(&self) -> f64 {
        let known = self.known();
        if known == 0 {
            0.0
        } else {
            self.crop as f64 / known as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurationThresholds {
    pub min_known_fraction: f64,
    pub min_crop_fraction: f64,
}

impl Default for CurationThresholds {
    fn default() -> Self {
        CurationThresholds {
            min_known_fraction: 0.5,
            min_crop_fraction: 0.5,
        }
    }
}

impl CurationThresholds {
    pub fn accepts(&self, stats: &GridLabelStats) -> bool {
        stats.known_fraction() >= self.min_known_fraction
            && stats.crop_fraction() >= self.min_crop_fraction
    }
}

/// Accepted grids, in input order.
pub fn curate_grids(
    stats: &[GridLabelStats],
    thresholds: CurationThresholds,
) -> Vec<&GridLabelStats> {
    stats.iter().filter(|s| thresholds.accepts(s)).collect()
}
