//! Confident-anchor region growing over per-pixel class probabilities.
//!
//! Probability channel `k` corresponds to label code `k + 1`; code 0 is
//! unknown. For every class, pixels whose probability exceeds the anchor
//! threshold seed a 4-connected flood fill through pixels whose
//! probability for the same class is at least the grow threshold. Pixels
//! claimed by more than one class, or by none, become unknown.

use std::collections::VecDeque;

use ndarray::{Array2, Array3, ArrayView1, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::UNKNOWN;

/// Tolerance on the per-pixel probability sum.
pub const SUM_TOLERANCE: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityGrid {
    pub id: String,
    /// `H × W × K`
    pub probs: Array3<f32>,
    /// Pixels covered by the segmenter output.
    pub valid: Array2<bool>,
}

fn check_vector(p: ArrayView1<'_, f32>) -> std::result::Result<(), String> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err("negative or non-finite probability".into());
    }
    let sum: f32 = p.sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(format!("probabilities sum to {sum}"));
    }
    Ok(())
}

impl ProbabilityGrid {
    /// Checks that every valid pixel holds a normalised probability vector.
    pub fn new(id: impl Into<String>, probs: Array3<f32>, valid: Array2<bool>) -> Result<Self> {
        let id = id.into();
        let (h, w, k) = probs.dim();
        if valid.dim() != (h, w) {
            return Err(Error::Shape(format!(
                "{id}: coverage mask {:?} for {h}×{w} probabilities",
                valid.dim()
            )));
        }
        if k == 0 || k > 254 {
            return Err(Error::Shape(format!("{id}: {k} classes")));
        }
        for ((i, j), p) in probs
            .lanes(Axis(2))
            .into_iter()
            .enumerate()
            .map(|(n, p)| ((n / w, n % w), p))
        {
            if valid[(i, j)] {
                check_vector(p)
                    .map_err(|m| Error::Contract(format!("{id} pixel ({i}, {j}): {m}")))?;
            }
        }
        Ok(ProbabilityGrid { id, probs, valid })
    }

    /// Builds a grid from a stored `H × W × K` array. Pixels whose vector is
    /// all zeros or contains NaN are outside the segmenter's coverage.
    pub fn from_stored(id: impl Into<String>, probs: Array3<f32>) -> Result<Self> {
        let valid = probs
            .lanes(Axis(2))
            .into_iter()
            .map(|p| !(p.iter().all(|&v| v == 0.0) || p.iter().any(|v| v.is_nan())))
            .collect::<Vec<_>>();
        let (h, w, _) = probs.dim();
        let valid = Array2::from_shape_vec((h, w), valid).expect("one flag per pixel");
        Self::new(id, probs, valid)
    }

    /// The stored form: invalid pixels are written as zero vectors.
    pub fn to_stored(&self) -> Array3<f32> {
        let mut out = self.probs.clone();
        Zip::from(out.lanes_mut(Axis(2)))
            .and(&self.valid)
            .for_each(|mut p, &v| {
                if !v {
                    p.fill(0.0);
                }
            });
        out
    }

    pub fn dims(&self) -> (usize, usize) {
        self.valid.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.dim().2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowParams {
    /// Strict lower bound for anchors.
    pub anchor: f32,
    /// Inclusive lower bound for grown pixels.
    pub grow: f32,
}

impl Default for GrowParams {
    fn default() -> Self {
        GrowParams {
            anchor: 0.9,
            grow: 0.3,
        }
    }
}

impl GrowParams {
    /// An anchor threshold above 0.5 makes anchors unique per pixel.
    pub fn validate(&self) -> Result<()> {
        if !(self.anchor > 0.5 && self.anchor <= 1.0) {
            return Err(Error::Config(format!(
                "anchor threshold {} outside (0.5, 1]",
                self.anchor
            )));
        }
        if !(self.grow >= 0.0 && self.grow <= self.anchor) {
            return Err(Error::Config(format!(
                "grow threshold {} outside [0, anchor]",
                self.grow
            )));
        }
        Ok(())
    }
}

/// Channel with the highest probability; ties go to the lowest index.
pub fn argmax_channel(p: ArrayView1<'_, f32>) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

/// Plain per-pixel argmax labels; invalid pixels are unknown.
pub fn argmax_labels(grid: &ProbabilityGrid) -> Array2<u8> {
    let mut out = Array2::zeros(grid.dims());
    Zip::from(&mut out)
        .and(grid.probs.lanes(Axis(2)))
        .and(&grid.valid)
        .for_each(|o, p, &v| {
            if v {
                *o = argmax_channel(p) as u8 + 1;
            }
        });
    out
}

pub fn find_anchors(grid: &ProbabilityGrid, class: usize, threshold: f32) -> Array2<bool> {
    let plane = grid.probs.index_axis(Axis(2), class);
    Zip::from(&plane)
        .and(&grid.valid)
        .map_collect(|&p, &v| v && p > threshold)
}

/// 4-connected flood fill from `anchors` through valid pixels whose class
/// probability is at least `threshold`.
pub fn grow_region(
    grid: &ProbabilityGrid,
    anchors: &Array2<bool>,
    class: usize,
    threshold: f32,
) -> Array2<bool> {
    let plane = grid.probs.index_axis(Axis(2), class);
    let (h, w) = grid.dims();
    let qualifies = |i: usize, j: usize| grid.valid[(i, j)] && plane[(i, j)] >= threshold;
    let mut region = Array2::from_elem((h, w), false);
    let mut queue = VecDeque::new();
    for ((i, j), &a) in anchors.indexed_iter() {
        if a {
            region[(i, j)] = true;
            queue.push_back((i, j));
        }
    }
    while let Some((i, j)) = queue.pop_front() {
        let neighbors = [
            (i.wrapping_sub(1), j),
            (i + 1, j),
            (i, j.wrapping_sub(1)),
            (i, j + 1),
        ];
        for (y, x) in neighbors {
            if y < h && x < w && !region[(y, x)] && qualifies(y, x) {
                region[(y, x)] = true;
                queue.push_back((y, x));
            }
        }
    }
    region
}

/// Pixels claimed by exactly one mask take that class (`index + 1`);
/// the rest are unknown.
pub fn resolve(masks: &[Array2<bool>]) -> Result<Array2<u8>> {
    let first = masks.first().ok_or(Error::Empty("class mask list"))?;
    let dim = first.dim();
    if let Some(m) = masks.iter().find(|m| m.dim() != dim) {
        return Err(Error::Shape(format!(
            "class mask {:?} vs {:?}",
            m.dim(),
            dim
        )));
    }
    let mut out = Array2::zeros(dim);
    let mut claims = Array2::<u32>::zeros(dim);
    for (k, mask) in masks.iter().enumerate() {
        Zip::from(&mut out)
            .and(&mut claims)
            .and(mask)
            .for_each(|o, n, &m| {
                if m {
                    *n += 1;
                    *o = k as u8 + 1;
                }
            });
    }
    Zip::from(&mut out).and(&claims).for_each(|o, &n| {
        if n != 1 {
            *o = UNKNOWN;
        }
    });
    Ok(out)
}

/// Per-class grown masks.
pub fn class_masks(grid: &ProbabilityGrid, params: GrowParams) -> Vec<Array2<bool>> {
    (0..grid.num_classes())
        .into_par_iter()
        .map(|k| {
            let anchors = find_anchors(grid, k, params.anchor);
            grow_region(grid, &anchors, k, params.grow)
        })
        .collect()
}

/// anchors → growth → clash resolution.
pub fn refine(grid: &ProbabilityGrid, params: GrowParams) -> Result<Array2<u8>> {
    params.validate()?;
    resolve(&class_masks(grid, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn grid_from(probs: Array3<f32>) -> ProbabilityGrid {
        let (h, w, _) = probs.dim();
        ProbabilityGrid::new("g", probs, Array2::from_elem((h, w), true)).unwrap()
    }

    /// Two-class grid from the probability of class 0.
    fn two_class(p0: &[&[f32]]) -> ProbabilityGrid {
        let h = p0.len();
        let w = p0[0].len();
        grid_from(Array3::from_shape_fn((h, w, 2), |(i, j, k)| {
            if k == 0 {
                p0[i][j]
            } else {
                1.0 - p0[i][j]
            }
        }))
    }

    #[test]
    fn argmax_and_ties() {
        let g = grid_from(
            Array3::from_shape_vec((1, 2, 3), vec![0.7, 0.2, 0.1, 0.4, 0.4, 0.2]).unwrap(),
        );
        assert_eq!(argmax_labels(&g), ndarray::arr2(&[[1u8, 1]]));
        let tie = grid_from(Array3::from_shape_vec((1, 1, 2), vec![0.5, 0.5]).unwrap());
        assert_eq!(argmax_labels(&tie)[(0, 0)], 1);
    }

    #[test]
    fn anchor_threshold_is_strict() {
        let g = two_class(&[&[0.91, 0.90, 0.3]]);
        let a = find_anchors(&g, 0, 0.9);
        assert_eq!(a.row(0).to_vec(), vec![true, false, false]);
        assert!(find_anchors(&g, 1, 0.9).iter().all(|&x| !x));
    }

    #[test]
    fn grow_threshold_is_inclusive_and_connected() {
        let g = two_class(&[&[0.95, 0.3, 0.29, 0.5], &[0.1, 0.1, 0.1, 0.6]]);
        let anchors = find_anchors(&g, 0, 0.9);
        let r = grow_region(&g, &anchors, 0, 0.3);
        // (0,1) at exactly 0.3 joins; (0,3)/(1,3) are above 0.3 but cut off by 0.29.
        assert_eq!(
            r,
            ndarray::arr2(&[[true, true, false, false], [false, false, false, false]])
        );
    }

    #[test]
    fn anchor_always_in_region() {
        let g = two_class(&[&[0.1, 0.95, 0.1]]);
        let anchors = find_anchors(&g, 0, 0.9);
        let r = grow_region(&g, &anchors, 0, 0.99);
        assert!(r[(0, 1)]);
    }

    #[test]
    fn clashes_become_unknown() {
        let a = ndarray::arr2(&[[true, true, false]]);
        let b = ndarray::arr2(&[[false, true, false]]);
        let out = resolve(&[a, b]).unwrap();
        assert_eq!(out, ndarray::arr2(&[[1u8, 0, 0]]));
        assert!(resolve(&[]).is_err());
    }

    #[test]
    fn invalid_pixels_stay_unknown() {
        let probs = Array3::from_shape_fn((1, 3, 2), |(_, _, k)| if k == 0 { 1.0 } else { 0.0 });
        let mut valid = Array2::from_elem((1, 3), true);
        valid[(0, 1)] = false;
        let g = ProbabilityGrid::new("g", probs, valid).unwrap();
        assert_eq!(
            refine(&g, GrowParams::default()).unwrap(),
            ndarray::arr2(&[[1u8, 0, 1]])
        );
        assert_eq!(argmax_labels(&g), ndarray::arr2(&[[1u8, 0, 1]]));
    }

    #[test]
    fn stored_form_round_trips_coverage() {
        let mut probs = Array3::from_elem((2, 2, 2), 0.5f32);
        probs[(1, 1, 0)] = 0.0;
        probs[(1, 1, 1)] = 0.0;
        let g = ProbabilityGrid::from_stored("g", probs.clone()).unwrap();
        assert!(!g.valid[(1, 1)]);
        assert_eq!(g.to_stored(), probs);
    }

    #[test]
    fn rejects_unnormalised_vectors() {
        let probs = Array3::from_elem((1, 1, 2), 0.6f32);
        assert!(matches!(
            ProbabilityGrid::from_stored("g", probs),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn params_validate() {
        assert!(GrowParams {
            anchor: 0.5,
            grow: 0.3
        }
        .validate()
        .is_err());
        assert!(GrowParams {
            anchor: 0.9,
            grow: 0.95
        }
        .validate()
        .is_err());
        assert!(GrowParams::default().validate().is_ok());
    }
}
