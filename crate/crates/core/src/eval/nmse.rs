//! Disagreement-pixel errors against per-grid characteristic series, and
//! their per-class max normalisation.
//!
//! For class `k`, the reference pool holds pixels the reference labels as
//! `k` and the candidate does not; the refined pool holds pixels the
//! candidate labels as `k` and the reference does not. Both pools are
//! measured against `k`'s characteristic series in the pixel's grid and
//! normalised jointly by their largest raw error.

use ndarray::{Array2, ArrayView3, Zip};
use serde::{Deserialize, Serialize};

use super::ndvi::{characteristic_series, CharacteristicSeries};
use crate::error::{Error, Result};
use crate::UNKNOWN;

/// Raw (unnormalised) errors of one disagreement pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDisagreement {
    pub row: usize,
    pub col: usize,
    pub reference_class: u8,
    pub candidate_class: u8,
    /// Against the reference class's series; `None` without a valid series.
    pub error_reference_class: Option<f64>,
    pub error_candidate_class: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAnalysis {
    pub grid: String,
    pub series: Vec<CharacteristicSeries>,
    /// Agreement pixels per code, index 0 unused.
    pub agreement: Vec<u64>,
    pub pixels: Vec<RawDisagreement>,
}

/// Mean squared difference over the windows.
pub fn mean_squared_error(pixel: impl Iterator<Item = f32>, reference: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, s) in pixel.zip(reference) {
        let d = x as f64 - s;
        sum += d * d;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Characteristic series and raw disagreement errors for one grid.
pub fn analyze_grid(
    grid: &str,
    ndvi: ArrayView3<'_, f32>,
    reference: &Array2<u8>,
    candidate: &Array2<u8>,
    num_classes: usize,
    min_support: u64,
) -> Result<GridAnalysis> {
    let (_, h, w) = ndvi.dim();
    if reference.dim() != (h, w) || candidate.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "{grid}: labels {:?}/{:?} for {h}×{w} NDVI",
            reference.dim(),
            candidate.dim()
        )));
    }
    let mut agreement = vec![0u64; num_classes + 1];
    Zip::from(reference).and(candidate).for_each(|&r, &c| {
        if r != UNKNOWN && r == c && (r as usize) <= num_classes {
            agreement[r as usize] += 1;
        }
    });
    let mut by_class: Vec<Option<CharacteristicSeries>> = vec![None; num_classes + 1];
    for k in 1..=num_classes {
        if agreement[k] < min_support || agreement[k] == 0 {
            continue;
        }
        let mask = Zip::from(reference)
            .and(candidate)
            .map_collect(|&r, &c| r as usize == k && c as usize == k);
        by_class[k] = characteristic_series(grid, k as u8, ndvi, &mask, min_support)?;
    }
    let error_for = |class: u8, i: usize, j: usize| {
        by_class
            .get(class as usize)
            .and_then(Option::as_ref)
            .map(|s| {
                mean_squared_error(ndvi.slice(ndarray::s![.., i, j]).iter().copied(), &s.series)
            })
    };
    let mut pixels = Vec::new();
    for ((i, j), &r) in reference.indexed_iter() {
        let c = candidate[(i, j)];
        if r == UNKNOWN || c == UNKNOWN || r == c {
            continue;
        }
        if r as usize > num_classes || c as usize > num_classes {
            return Err(Error::Contract(format!(
                "{grid}: label pair ({r}, {c}) outside the {num_classes}-class catalog"
            )));
        }
        pixels.push(RawDisagreement {
            row: i,
            col: j,
            reference_class: r,
            candidate_class: c,
            error_reference_class: error_for(r, i, j),
            error_candidate_class: error_for(c, i, j),
        });
    }
    Ok(GridAnalysis {
        grid: grid.to_string(),
        series: by_class.into_iter().flatten().collect(),
        agreement,
        pixels,
    })
}

/// Divides every value by the maximum; all zeros if the maximum is 0.
/// Returns the maximum.
pub fn normalize_by_max(values: &mut [f64]) -> f64 {
    let max = values.iter().copied().fold(0.0, f64::max);
    for v in values.iter_mut() {
        *v = if max > 0.0 { *v / max } else { 0.0 };
    }
    max
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementRecord {
    pub grid: String,
    pub row: usize,
    pub col: usize,
    pub reference_class: u8,
    pub candidate_class: u8,
    pub nmse_reference_class: Option<f64>,
    pub nmse_candidate_class: Option<f64>,
}

/// Normalised errors of one class's two pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassErrors {
    pub class: u8,
    pub agreement: u64,
    /// Pixels the reference labels as this class.
    pub reference: Vec<f64>,
    /// Pixels the candidate labels as this class.
    pub refined: Vec<f64>,
    /// Disagreement pixels of this class in grids without a valid series.
    pub excluded: u64,
    pub max_raw_error: f64,
    /// Grids with a valid series.
    pub grids_with_series: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmseAnalysis {
    /// Index `k − 1` holds class `k`.
    pub classes: Vec<ClassErrors>,
    pub records: Vec<DisagreementRecord>,
}

/// Pools all grids per class and normalises by the pooled maximum.
pub fn normalize_errors(grids: &[GridAnalysis], num_classes: usize) -> NmseAnalysis {
    let mut classes: Vec<ClassErrors> = (1..=num_classes)
        .map(|k| ClassErrors {
            class: k as u8,
            agreement: 0,
            reference: Vec::new(),
            refined: Vec::new(),
            excluded: 0,
            max_raw_error: 0.0,
            grids_with_series: 0,
        })
        .collect();
    for g in grids {
        for (k, n) in g.agreement.iter().enumerate().skip(1).take(num_classes) {
            classes[k - 1].agreement += n;
        }
        for s in &g.series {
            classes[s.class as usize - 1].grids_with_series += 1;
        }
        for p in &g.pixels {
            let r = &mut classes[p.reference_class as usize - 1];
            match p.error_reference_class {
                Some(e) => r.reference.push(e),
                None => r.excluded += 1,
            }
            let c = &mut classes[p.candidate_class as usize - 1];
            match p.error_candidate_class {
                Some(e) => c.refined.push(e),
                None => c.excluded += 1,
            }
        }
    }
    for c in &mut classes {
        c.max_raw_error = c
            .reference
            .iter()
            .chain(&c.refined)
            .copied()
            .fold(0.0, f64::max);
    }
    let scale = |class: u8, e: Option<f64>| {
        e.map(|e| {
            let max = classes[class as usize - 1].max_raw_error;
            if max > 0.0 {
                e / max
            } else {
                0.0
            }
        })
    };
    let records = grids
        .iter()
        .flat_map(|g| {
            g.pixels.iter().map(|p| DisagreementRecord {
                grid: g.grid.clone(),
                row: p.row,
                col: p.col,
                reference_class: p.reference_class,
                candidate_class: p.candidate_class,
                nmse_reference_class: scale(p.reference_class, p.error_reference_class),
                nmse_candidate_class: scale(p.candidate_class, p.error_candidate_class),
            })
        })
        .collect();
    for c in &mut classes {
        let max = c.max_raw_error;
        for v in c.reference.iter_mut().chain(c.refined.iter_mut()) {
            *v = if max > 0.0 { *v / max } else { 0.0 };
        }
    }
    NmseAnalysis { classes, records }
}
