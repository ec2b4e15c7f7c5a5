//! Label-quality evaluation against the reference product.

pub mod confusion;
pub mod ndvi;
pub mod nmse;
pub mod report;
pub mod score;

use serde::{Deserialize, Serialize};

pub use confusion::{ClassMetrics, ConfusionMatrix, Metrics};
pub use ndvi::{characteristic_series, compute_ndvi, CharacteristicSeries, NdviBands};
pub use nmse::{analyze_grid, normalize_errors, DisagreementRecord, GridAnalysis, NmseAnalysis};
pub use score::{
    auc, estimated_f1, scatter_stats, select_threshold, EstimateCounts, FractionBand, Prf,
    ScatterPoint, ScatterStats, ScoreCurve, ThresholdChoice, THRESHOLD_LADDER,
};

use crate::catalog::ClassCatalog;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Minimum agreement pixels for a characteristic series.
    pub min_support: u64,
    pub ladder: Vec<f64>,
    pub band: FractionBand,
    pub curve_points: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            min_support: 100,
            ladder: THRESHOLD_LADDER.to_vec(),
            band: FractionBand::default(),
            curve_points: 101,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub e: f64,
    pub score_reference: Option<f64>,
    pub score_refined: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEvaluation {
    pub code: u8,
    pub name: String,
    pub is_crop: bool,
    pub agreement: u64,
    /// Disagreement pixels with a valid series, labelled this class by the
    /// reference.
    pub reference_disagreement: u64,
    pub refined_disagreement: u64,
    pub excluded: u64,
    pub area_reference: Option<f64>,
    pub area_refined: Option<f64>,
    /// `area_refined − area_reference`.
    pub area_difference: Option<f64>,
    pub f1: f64,
    pub threshold: Option<ThresholdChoice>,
    pub estimate_reference: Option<Prf>,
    pub estimate_refined: Option<Prf>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub class_names: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub grids: usize,
    pub disagreement_ratio: f64,
    pub crop_disagreement_ratio: Option<f64>,
    pub metrics: Metrics,
    pub crop_metrics: Option<Metrics>,
    pub classes: Vec<ClassEvaluation>,
    pub scatter: ScatterStats,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn confusion_matrix(&self) -> Result<ConfusionMatrix> {
        let k = self.class_names.len();
        let flat: Vec<u64> = self.confusion.iter().flatten().copied().collect();
        let counts = ndarray::Array2::from_shape_vec((k, k), flat)
            .map_err(|e| Error::Shape(format!("stored confusion matrix: {e}")))?;
        ConfusionMatrix::new(self.class_names.clone(), counts)
    }
}

fn curve_for(values: &[f64]) -> Option<ScoreCurve> {
    if values.is_empty() {
        None
    } else {
        // Errors are normalised per class, so the upper bound is 1.
        Some(ScoreCurve::new(values.to_vec(), 1.0).expect("normalised errors lie in [0, 1]"))
    }
}

/// Assembles the full evaluation from the pooled confusion matrix and the
/// per-grid disagreement analyses.
pub fn build_report(
    matrix: &ConfusionMatrix,
    grids: &[GridAnalysis],
    catalog: &ClassCatalog,
    settings: &EvalSettings,
) -> Result<EvaluationReport> {
    let k = catalog.num_classes();
    if matrix.num_classes() != k {
        return Err(Error::Shape(format!(
            "{}-class matrix for a {k}-class catalog",
            matrix.num_classes()
        )));
    }
    let metrics = matrix.prf1()?;
    let mut warnings = Vec::new();
    let crop_idx: Vec<usize> = catalog
        .classes()
        .iter()
        .filter(|c| c.is_crop)
        .map(|c| c.code as usize - 1)
        .collect();
    let crop_metrics = if crop_idx.is_empty() {
        None
    } else {
        Some(matrix.prf1_subset(&crop_idx)?)
    };
    let crop_disagreement_ratio = crop_metrics
        .as_ref()
        .filter(|m| m.support > 0)
        .map(|m| 1.0 - m.accuracy);

    let analysis = normalize_errors(grids, k);
    let mut classes = Vec::with_capacity(k);
    for (errors, entry) in analysis.classes.iter().zip(catalog.classes()) {
        let reference = curve_for(&errors.reference);
        let refined = curve_for(&errors.refined);
        let pooled: Vec<f64> = errors
            .reference
            .iter()
            .chain(&errors.refined)
            .copied()
            .collect();
        if errors.excluded > 0 {
            warnings.push(format!(
                "{}: {} disagreement pixels in grids without a characteristic series",
                entry.name, errors.excluded
            ));
        }
        let (threshold, estimate_reference, estimate_refined) = if pooled.is_empty() {
            (None, None, None)
        } else {
            let choice = select_threshold(&pooled, &settings.ladder, settings.band)?;
            let below = |v: &[f64]| v.iter().filter(|&&e| e < choice.threshold).count() as u64;
            let (t_ref, t_new) = (below(&errors.reference), below(&errors.refined));
            let estimate = |disagree: usize, thresholded: u64| {
                estimated_f1(EstimateCounts {
                    agreement: errors.agreement,
                    disagree: disagree as u64,
                    thresholded,
                    thresholded_total: t_ref + t_new,
                })
            };
            (
                Some(choice),
                Some(estimate(errors.reference.len(), t_ref)),
                Some(estimate(errors.refined.len(), t_new)),
            )
        };
        let curve = if reference.is_none() && refined.is_none() {
            Vec::new()
        } else {
            let n = settings.curve_points.max(2);
            (0..n)
                .map(|i| {
                    let e = if i + 1 == n {
                        1.0
                    } else {
                        i as f64 / (n - 1) as f64
                    };
                    CurvePoint {
                        e,
                        score_reference: reference.as_ref().map(|c| c.score(e)),
                        score_refined: refined.as_ref().map(|c| c.score(e)),
                    }
                })
                .collect()
        };
        let area_reference = reference.as_ref().map(ScoreCurve::area);
        let area_refined = refined.as_ref().map(ScoreCurve::area);
        classes.push(ClassEvaluation {
            code: entry.code,
            name: entry.name.clone(),
            is_crop: entry.is_crop,
            agreement: errors.agreement,
            reference_disagreement: errors.reference.len() as u64,
            refined_disagreement: errors.refined.len() as u64,
            excluded: errors.excluded,
            area_reference,
            area_refined,
            area_difference: area_reference.zip(area_refined).map(|(a, b)| b - a),
            f1: metrics.per_class[entry.code as usize - 1].f1,
            threshold,
            estimate_reference,
            estimate_refined,
            curve,
        });
    }

    let crop_table = catalog.crop_table();
    let points: Vec<ScatterPoint> = analysis
        .records
        .iter()
        .filter_map(|r| {
            Some(ScatterPoint {
                nmse_reference_class: r.nmse_reference_class?,
                nmse_candidate_class: r.nmse_candidate_class?,
                involves_crop: crop_table[r.reference_class as usize]
                    || crop_table[r.candidate_class as usize],
            })
        })
        .collect();

    Ok(EvaluationReport {
        class_names: matrix.names().to_vec(),
        confusion: matrix
            .counts()
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect(),
        grids: grids.len(),
        disagreement_ratio: matrix.disagreement_ratio()?,
        crop_disagreement_ratio,
        metrics,
        crop_metrics,
        classes,
        scatter: scatter_stats(&points),
        warnings,
    })
}
