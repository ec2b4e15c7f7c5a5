//! NDVI time series and per-grid characteristic class signatures.

use ndarray::{Array2, Array3, ArrayView3, ArrayView4, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel indices of the red and near-infrared bands in an image stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NdviBands {
    pub red: usize,
    pub nir: usize,
}

impl Default for NdviBands {
    fn default() -> Self {
        NdviBands { red: 2, nir: 6 }
    }
}

pub fn ndvi_value(red: f32, nir: f32) -> f32 {
    let den = nir + red;
    if den == 0.0 {
        0.0
    } else {
        (nir - red) / den
    }
}

/// `(NIR − Red) / (NIR + Red)` per window and pixel of a `T × H × W × C`
/// stack; a zero denominator yields 0.
pub fn compute_ndvi(stack: ArrayView4<'_, f32>, bands: NdviBands) -> Result<Array3<f32>> {
    let (t, h, w, c) = stack.dim();
    for (name, idx) in [("red", bands.red), ("nir", bands.nir)] {
        if idx >= c {
            return Err(Error::Config(format!(
                "{name} band index {idx} but the stack has {c} channels"
            )));
        }
    }
    let red = stack.index_axis(Axis(3), bands.red);
    let nir = stack.index_axis(Axis(3), bands.nir);
    let mut out = Array3::zeros((t, h, w));
    Zip::from(&mut out)
        .and(&red)
        .and(&nir)
        .for_each(|o, &r, &n| *o = ndvi_value(r, n));
    Ok(out)
}

/// Window-wise median NDVI over one class's agreement pixels in one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicSeries {
    pub grid: String,
    pub class: u8,
    pub series: Vec<f64>,
    pub support: u64,
}

/// Median of a slice; the mean of the two middle values for even lengths.
pub fn median(values: &mut [f32]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let (_, &mut upper, _) = values.select_nth_unstable_by(n / 2, f32::total_cmp);
    if n % 2 == 1 {
        return Some(upper as f64);
    }
    let lower = values[..n / 2]
        .iter()
        .copied()
        .fold(f32::NEG_INFINITY, f32::max);
    Some((lower as f64 + upper as f64) / 2.0)
}

/// `None` when fewer than `min_support` pixels are in `mask`.
pub fn characteristic_series(
    grid: &str,
    class: u8,
    ndvi: ArrayView3<'_, f32>,
    mask: &Array2<bool>,
    min_support: u64,
) -> Result<Option<CharacteristicSeries>> {
    let (t, h, w) = ndvi.dim();
    if mask.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "agreement mask {:?} for {h}×{w} NDVI",
            mask.dim()
        )));
    }
    let pixels: Vec<(usize, usize)> = mask
        .indexed_iter()
        .filter(|(_, &m)| m)
        .map(|(p, _)| p)
        .collect();
    let support = pixels.len() as u64;
    if support < min_support || support == 0 {
        return Ok(None);
    }
    let mut buf = Vec::with_capacity(pixels.len());
    let series = (0..t)
        .map(|k| {
            buf.clear();
            buf.extend(pixels.iter().map(|&(i, j)| ndvi[(k, i, j)]));
            median(&mut buf).expect("non-empty support")
        })
        .collect();
    Ok(Some(CharacteristicSeries {
        grid: grid.to_string(),
        class,
        series,
        support,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn formula_cases() {
        assert_eq!(ndvi_value(0.3, 0.3), 0.0);
        assert!((ndvi_value(0.2, 0.8) - 0.6).abs() < 1e-6);
        assert_eq!(ndvi_value(0.0, 0.0), 0.0);
    }

    #[test]
    fn stack_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let stack = Array4::from_shape_fn((3, 4, 5, 7), |_| rng.gen_range(0.0f32..1.0));
        let bands = NdviBands { red: 2, nir: 6 };
        let out = compute_ndvi(stack.view(), bands).unwrap();
        for ((t, i, j), &v) in out.indexed_iter() {
            let r = stack[(t, i, j, 2)];
            let n = stack[(t, i, j, 6)];
            assert_eq!(v, (n - r) / (n + r));
        }
    }

    #[test]
    fn missing_band_is_config_error() {
        let stack = Array4::<f32>::zeros((1, 1, 1, 4));
        assert!(matches!(
            compute_ndvi(stack.view(), NdviBands::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    fn mask_with(n: usize, h: usize, w: usize) -> Array2<bool> {
        Array2::from_shape_fn((h, w), |(i, j)| i * w + j < n)
    }

    #[test]
    fn support_threshold() {
        let ndvi = Array3::<f32>::zeros((2, 10, 10));
        let short =
            characteristic_series("g", 1, ndvi.view(), &mask_with(99, 10, 10), 100).unwrap();
        assert!(short.is_none());
        let ok = characteristic_series("g", 1, ndvi.view(), &mask_with(100, 10, 10), 100).unwrap();
        assert_eq!(ok.unwrap().support, 100);
    }

    #[test]
    fn identical_pixels_give_their_series() {
        let ndvi = Array3::from_shape_fn((4, 10, 10), |(t, _, _)| t as f32 * 0.1);
        let s = characteristic_series("g", 2, ndvi.view(), &mask_with(100, 10, 10), 100)
            .unwrap()
            .unwrap();
        for (t, v) in s.series.iter().enumerate() {
            assert_eq!(*v, (t as f32 * 0.1) as f64);
        }
    }

    #[test]
    fn random_series_match_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ndvi = Array3::from_shape_fn((6, 11, 11), |_| rng.gen_range(-1.0f32..1.0));
        let mask = mask_with(101, 11, 11);
        let s = characteristic_series("g", 1, ndvi.view(), &mask, 100)
            .unwrap()
            .unwrap();
        for t in 0..6 {
            let mut v: Vec<f32> = (0..101).map(|n| ndvi[(t, n / 11, n % 11)]).collect();
            v.sort_by(f32::total_cmp);
            assert_eq!(s.series[t], v[50] as f64);
        }
    }
}
