//! Per-channel percentile clipping and min-max scaling of yearly stacks.

use ndarray::{Array4, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Percentile of `values` with linear interpolation between order
/// statistics (rank `p/100 · (n-1)`). Reorders `values`.
pub fn percentile_linear(values: &mut [f32], p: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=100.0).contains(&p) {
        return None;
    }
    let n = values.len();
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let (_, &mut lo_val, upper) = values.select_nth_unstable_by(lo, f32::total_cmp);
    let lo_val = lo_val as f64;
    if frac == 0.0 || upper.is_empty() {
        return Some(lo_val);
    }
    let hi_val = upper.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    Some(lo_val + (hi_val - lo_val) * frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelBounds {
    pub lower: f64,
    pub upper: f64,
}

impl ChannelBounds {
    pub fn is_constant(&self) -> bool {
        self.upper <= self.lower
    }

    pub fn apply(&self, v: f32) -> f32 {
        if self.is_constant() {
            return 0.0;
        }
        let clipped = (v as f64).clamp(self.lower, self.upper);
        ((clipped - self.lower) / (self.upper - self.lower)).clamp(0.0, 1.0) as f32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileClip {
    pub lower: f64,
    pub upper: f64,
}

impl Default for PercentileClip {
    fn default() -> Self {
        PercentileClip {
            lower: 2.0,
            upper: 98.0,
        }
    }
}

/// Clips every channel of a `T × H × W × C` stack to its percentile bounds
/// computed over all valid windows and pixels, then scales to `[0, 1]`.
///
/// Invalid windows are set to zero. A constant channel maps to zeros.
pub fn clip_normalize(
    stack: &mut Array4<f32>,
    validity: &[bool],
    clip: PercentileClip,
) -> Result<Vec<ChannelBounds>> {
    let (t, h, w, c) = stack.dim();
    if validity.len() != t {
        return Err(Error::Shape(format!(
            "{} validity flags for {t} windows",
            validity.len()
        )));
    }
    if t * h * w * c == 0 {
        return Err(Error::Empty("image stack"));
    }
    if !validity.iter().any(|&v| v) {
        return Err(Error::Empty("set of valid windows"));
    }
    if !(0.0 <= clip.lower && clip.lower < clip.upper && clip.upper <= 100.0) {
        return Err(Error::Config(format!(
            "percentile bounds {} / {} out of order",
            clip.lower, clip.upper
        )));
    }

    let bounds = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut values = Vec::with_capacity(h * w * t);
            for (k, window) in stack.axis_iter(Axis(0)).enumerate() {
                if validity[k] {
                    values.extend(window.index_axis(Axis(2), ch).iter().copied());
                }
            }
            let lower = percentile_linear(&mut values, clip.lower).expect("non-empty");
            let upper = percentile_linear(&mut values, clip.upper).expect("non-empty");
            ChannelBounds { lower, upper }
        })
        .collect::<Vec<_>>();

    for (ch, b) in bounds.iter().enumerate() {
        if b.is_constant() {
            log::warn!("channel {ch} is constant ({}); mapped to zeros", b.lower);
        }
    }

    stack
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(validity.par_iter())
        .for_each(|(mut window, &valid)| {
            if !valid {
                window.fill(0.0);
                return;
            }
            for mut px in window.lanes_mut(Axis(2)) {
                for (v, b) in px.iter_mut().zip(&bounds) {
                    *v = b.apply(*v);
                }
            }
        });
    Ok(bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Sort-based linear-interpolation percentile.
    fn oracle(values: &[f32], p: f64) -> f64 {
        let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        v.sort_by(f64::total_cmp);
        let rank = p / 100.0 * (v.len() - 1) as f64;
        let lo = rank.floor() as usize;
        let hi = rank.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
    }

    fn one_channel(values: &[f32]) -> Array4<f32> {
        Array4::from_shape_vec((1, 1, values.len(), 1), values.to_vec()).unwrap()
    }

    #[test]
    fn uniform_ramp_percentiles() {
        let values: Vec<f32> = (0..100).map(|v| v as f32).collect();
        let mut scratch = values.clone();
        let p2 = percentile_linear(&mut scratch, 2.0).unwrap();
        let p98 = percentile_linear(&mut scratch, 98.0).unwrap();
        assert_abs_diff_eq!(p2, 1.98, epsilon = 1e-9);
        assert_abs_diff_eq!(p98, 97.02, epsilon = 1e-9);
        assert_abs_diff_eq!(p2, oracle(&values, 2.0), epsilon = 1e-12);

        let mut stack = one_channel(&values);
        let bounds = clip_normalize(&mut stack, &[true], PercentileClip::default()).unwrap();
        assert_abs_diff_eq!(bounds[0].lower, 1.98, epsilon = 1e-9);
        for (i, &v) in stack.iter().enumerate() {
            let expected = ((i as f64).clamp(1.98, 97.02) - 1.98) / (97.02 - 1.98);
            assert_abs_diff_eq!(v as f64, expected, epsilon = 1e-6);
        }
        assert_eq!(stack.iter().cloned().fold(f32::INFINITY, f32::min), 0.0);
        assert_eq!(stack.iter().cloned().fold(f32::NEG_INFINITY, f32::max), 1.0);
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let mut stack = one_channel(&[5.0; 20]);
        let bounds = clip_normalize(&mut stack, &[true], PercentileClip::default()).unwrap();
        assert!(bounds[0].is_constant());
        assert!(stack.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outliers_saturate_to_one() {
        // 98 values in [0,1) plus 2% outliers at 10.0.
        let mut values: Vec<f32> = (0..98).map(|i| i as f32 / 98.0).collect();
        values.extend([10.0, 10.0]);
        let upper = oracle(&values, 98.0);
        let mut stack = one_channel(&values);
        let bounds = clip_normalize(&mut stack, &[true], PercentileClip::default()).unwrap();
        assert_abs_diff_eq!(bounds[0].upper, upper, epsilon = 1e-6);
        assert_eq!(stack[(0, 0, 98, 0)], 1.0);
        assert_eq!(stack[(0, 0, 99, 0)], 1.0);
        assert!(stack.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn invalid_windows_excluded_from_bounds() {
        let mut stack = Array4::<f32>::zeros((2, 1, 3, 1));
        stack.index_axis_mut(Axis(0), 0).fill(1000.0);
        stack[(1, 0, 0, 0)] = 1.0;
        stack[(1, 0, 1, 0)] = 2.0;
        stack[(1, 0, 2, 0)] = 3.0;
        let bounds = clip_normalize(
            &mut stack,
            &[false, true],
            PercentileClip {
                lower: 0.0,
                upper: 100.0,
            },
        )
        .unwrap();
        assert_eq!(
            bounds[0],
            ChannelBounds {
                lower: 1.0,
                upper: 3.0
            }
        );
        assert!(stack.index_axis(Axis(0), 0).iter().all(|&v| v == 0.0));
        assert_eq!(stack[(1, 0, 1, 0)], 0.5);
    }

    #[test]
    fn rejects_stack_without_valid_window() {
        let mut stack = Array4::<f32>::zeros((2, 1, 1, 1));
        assert!(clip_normalize(&mut stack, &[false, false], PercentileClip::default()).is_err());
        assert!(clip_normalize(&mut stack, &[true], PercentileClip::default()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn selection_percentile_matches_sort(values in proptest::collection::vec(-1e4f32..1e4, 1..300), p in 0.0f64..=100.0) {
            let mut scratch = values.clone();
            let got = percentile_linear(&mut scratch, p).unwrap();
            let want = oracle(&values, p);
            proptest::prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }
}
