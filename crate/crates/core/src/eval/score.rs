//! Score curves over normalised disagreement errors, their area, and the
//! threshold-based agreement estimates derived from them.

use serde::{Deserialize, Serialize};

use super::confusion::harmonic;
use crate::error::{Error, Result};

/// Fraction of disagreement pixels with error at most `E`, for
/// `E ∈ [0, e_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCurve {
    sorted: Vec<f64>,
    e_max: f64,
}

impl ScoreCurve {
    pub fn new(mut values: Vec<f64>, e_max: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("error multiset"));
        }
        if !(e_max.is_finite() && e_max >= 0.0) {
            return Err(Error::Contract(format!("curve upper bound {e_max}")));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !(v.is_finite() && **v >= 0.0 && **v <= e_max))
        {
            return Err(Error::Contract(format!(
                "error value {v} outside [0, {e_max}]"
            )));
        }
        values.sort_by(f64::total_cmp);
        Ok(ScoreCurve {
            sorted: values,
            e_max,
        })
    }

    /// Upper bound taken from the largest value.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let e_max = values.iter().copied().fold(0.0, f64::max);
        Self::new(values, e_max)
    }

    pub fn e_max(&self) -> f64 {
        self.e_max
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn score(&self, e: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= e) as f64 / self.sorted.len() as f64
    }

    /// `(1 / e_max) ∫₀^e_max Score(E) dE`, summed exactly over the steps.
    /// A curve with `e_max = 0` is 1 everywhere and has area 1.
    pub fn area(&self) -> f64 {
        if self.e_max == 0.0 {
            return 1.0;
        }
        let n = self.sorted.len() as f64;
        let mut area = 0.0;
        for (i, &v) in self.sorted.iter().enumerate() {
            let next = self.sorted.get(i + 1).copied().unwrap_or(self.e_max);
            area += (next - v) * (i + 1) as f64 / n;
        }
        area / self.e_max
    }

    /// `points` evenly spaced samples `(E, Score(E))` from 0 to `e_max`.
    pub fn sample(&self, points: usize) -> Vec<(f64, f64)> {
        let step = if points > 1 {
            self.e_max / (points - 1) as f64
        } else {
            0.0
        };
        (0..points)
            .map(|i| {
                let e = if i + 1 == points {
                    self.e_max
                } else {
                    i as f64 * step
                };
                (e, self.score(e))
            })
            .collect()
    }
}

pub fn auc(values: &[f64]) -> Result<f64> {
    Ok(ScoreCurve::from_values(values.to_vec())?.area())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateCounts {
    pub agreement: u64,
    /// Disagreement pixels of this strategy.
    pub disagree: u64,
    /// Those of this strategy's disagreement pixels below the threshold.
    pub thresholded: u64,
    /// Below-threshold disagreement pixels of both strategies.
    pub thresholded_total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision treats below-threshold disagreement pixels as correct;
/// recall measures them against all below-threshold pixels.
pub fn estimated_f1(c: EstimateCounts) -> Prf {
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let hits = c.thresholded + c.agreement;
    let precision = ratio(hits, c.disagree + c.agreement);
    let recall = ratio(hits, c.thresholded_total + c.agreement);
    Prf {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

pub const THRESHOLD_LADDER: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionBand {
    pub lower: f64,
    pub upper: f64,
}

impl Default for FractionBand {
    fn default() -> Self {
        FractionBand {
            lower: 0.25,
            upper: 0.45,
        }
    }
}

impl FractionBand {
    fn distance(&self, f: f64) -> f64 {
        if f < self.lower {
            self.lower - f
        } else if f > self.upper {
            f - self.upper
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    /// Share of values strictly below the threshold.
    pub fraction: f64,
    pub in_band: bool,
}

/// Smallest ladder threshold whose below-threshold share falls in the band,
/// else the one nearest the band (ties to the smaller threshold).
pub fn select_threshold(
    values: &[f64],
    ladder: &[f64],
    band: FractionBand,
) -> Result<ThresholdChoice> {
    if values.is_empty() {
        return Err(Error::Empty("error multiset"));
    }
    if ladder.is_empty() {
        return Err(Error::Empty("threshold ladder"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ladder = ladder.to_vec();
    ladder.sort_by(f64::total_cmp);
    let fraction = |t: f64| sorted.partition_point(|&v| v < t) as f64 / sorted.len() as f64;
    let mut best: Option<ThresholdChoice> = None;
    for &t in &ladder {
        let f = fraction(t);
        let choice = ThresholdChoice {
            threshold: t,
            fraction: f,
            in_band: band.distance(f) == 0.0,
        };
        if choice.in_band {
            return Ok(choice);
        }
        if best.is_none_or(|b| band.distance(f) < band.distance(b.fraction)) {
            best = Some(choice);
        }
    }
    Ok(best.expect("non-empty ladder"))
}

/// Errors of one disagreement pixel against both labelled classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub nmse_reference_class: f64,
    pub nmse_candidate_class: f64,
    /// Either class is a crop.
    pub involves_crop: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScatterGroup {
    /// Candidate-class error smaller.
    pub refined_better: u64,
    pub reference_better: u64,
    pub ties: u64,
    pub refined_mean_margin: f64,
    pub reference_mean_margin: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScatterStats {
    pub all: ScatterGroup,
    pub crops: ScatterGroup,
}

fn group<'a>(points: impl Iterator<Item = &'a ScatterPoint>) -> ScatterGroup {
    let mut g = ScatterGroup::default();
    let (mut refined_sum, mut reference_sum) = (0.0, 0.0);
    for p in points {
        let margin = p.nmse_reference_class - p.nmse_candidate_class;
        if margin > 0.0 {
            g.refined_better += 1;
            refined_sum += margin;
        } else if margin < 0.0 {
            g.reference_better += 1;
            reference_sum -= margin;
        } else {
            g.ties += 1;
        }
    }
    if g.refined_better > 0 {
        g.refined_mean_margin = refined_sum / g.refined_better as f64;
    }
    if g.reference_better > 0 {
        g.reference_mean_margin = reference_sum / g.reference_better as f64;
    }
    g
}

pub fn scatter_stats(points: &[ScatterPoint]) -> ScatterStats {
    ScatterStats {
        all: group(points.iter()),
        crops: group(points.iter().filter(|p| p.involves_crop)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_count() {
        let c = ScoreCurve::from_values(vec![0.1, 0.2, 0.4]).unwrap();
        assert!((c.score(0.3) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.score(0.4), 1.0);
        assert_eq!(c.score(-1e-12), 0.0);
    }

    #[test]
    fn extreme_areas() {
        assert_eq!(auc(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.7]).unwrap(), 0.0);
        assert!(auc(&[]).is_err());
    }

    #[test]
    fn four_step_area() {
        assert!((auc(&[0.25, 0.5, 0.75, 1.0]).unwrap() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn rejects_values_above_bound() {
        assert!(ScoreCurve::new(vec![0.5, 1.2], 1.0).is_err());
        assert!(ScoreCurve::new(vec![f64::NAN], 1.0).is_err());
    }

    #[test]
    fn sample_endpoints() {
        let c = ScoreCurve::new(vec![0.3, 0.6], 1.0).unwrap();
        let s = c.sample(11);
        assert_eq!(s.len(), 11);
        assert_eq!(s[0], (0.0, 0.0));
        assert_eq!(s[10], (1.0, 1.0));
        assert_eq!(s[5].1, 0.5);
    }

    #[test]
    fn worked_estimate() {
        let p = estimated_f1(EstimateCounts {
            agreement: 100,
            disagree: 50,
            thresholded: 10,
            thresholded_total: 40,
        });
        assert!((p.precision - 110.0 / 150.0).abs() < 1e-15);
        assert!((p.recall - 110.0 / 140.0).abs() < 1e-15);
        assert!((p.f1 - 22.0 / 29.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_estimates() {
        let perfect = estimated_f1(EstimateCounts {
            agreement: 5,
            disagree: 0,
            thresholded: 0,
            thresholded_total: 0,
        });
        assert_eq!(
            (perfect.precision, perfect.recall, perfect.f1),
            (1.0, 1.0, 1.0)
        );
        let zero = estimated_f1(EstimateCounts {
            agreement: 0,
            disagree: 0,
            thresholded: 0,
            thresholded_total: 0,
        });
        assert_eq!(zero.f1, 0.0);
    }

    #[test]
    fn threshold_in_band() {
        // Shares below 0.1/0.2/0.3: 0.1, 0.3, 0.6.
        let mut v = vec![0.05];
        v.extend([0.15, 0.15]);
        v.extend([0.25, 0.25, 0.25]);
        v.extend([0.9; 4]);
        let c = select_threshold(&v, &THRESHOLD_LADDER, FractionBand::default()).unwrap();
        assert_eq!(c.threshold, 0.2);
        assert!((c.fraction - 0.3).abs() < 1e-12);
        assert!(c.in_band);
    }

    #[test]
    fn threshold_fallback() {
        let c = select_threshold(&[0.0; 8], &THRESHOLD_LADDER, FractionBand::default()).unwrap();
        assert_eq!(c.threshold, 0.1);
        assert!(!c.in_band);
        let c = select_threshold(&[0.95; 8], &THRESHOLD_LADDER, FractionBand::default()).unwrap();
        assert_eq!((c.threshold, c.fraction), (0.1, 0.0));
    }

    #[test]
    fn scatter_buckets() {
        let pts = [
            ScatterPoint {
                nmse_reference_class: 0.2,
                nmse_candidate_class: 0.1,
                involves_crop: true,
            },
            ScatterPoint {
                nmse_reference_class: 0.1,
                nmse_candidate_class: 0.4,
                involves_crop: false,
            },
            ScatterPoint {
                nmse_reference_class: 0.3,
                nmse_candidate_class: 0.3,
                involves_crop: true,
            },
        ];
        let s = scatter_stats(&pts);
        assert_eq!(
            (s.all.refined_better, s.all.reference_better, s.all.ties),
            (1, 1, 1)
        );
        assert!((s.all.refined_mean_margin - 0.1).abs() < 1e-12);
        assert!((s.all.reference_mean_margin - 0.3).abs() < 1e-12);
        assert_eq!(
            (
                s.crops.refined_better,
                s.crops.reference_better,
                s.crops.ties
            ),
            (1, 0, 1)
        );
    }

    proptest! {
        #[test]
        fn area_matches_closed_form(v in proptest::collection::vec(0.0f64..1.0, 1..50)) {
            let c = ScoreCurve::from_values(v.clone()).unwrap();
            let e_max = c.e_max();
            let want = if e_max == 0.0 { 1.0 } else {
                1.0 - v.iter().sum::<f64>() / v.len() as f64 / e_max
            };
            prop_assert!((c.area() - want).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&c.area()));
        }

        #[test]
        fn estimate_monotone_in_thresholded(
            agreement in 0u64..1000, disagree in 0u64..1000, other in 0u64..1000, t in 0u64..1000,
        ) {
            let t = t.min(disagree);
            let at = |t: u64| estimated_f1(EstimateCounts {
                agreement, disagree, thresholded: t, thresholded_total: disagree + other,
            }).f1;
            if t < disagree {
                prop_assert!(at(t + 1) + 1e-12 >= at(t));
            }
        }
    }
}
