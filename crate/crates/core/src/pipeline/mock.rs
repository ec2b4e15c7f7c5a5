//! Nearest-centroid stand-in segmenter over NDVI time series.
//!
//! Each class with training pixels gets a centroid (mean NDVI per window).
//! A pixel's probabilities are the softmax of its negative RMS distances to
//! the centroids divided by a temperature; classes without a centroid get
//! probability 0.

use ndarray::{Array2, Array3, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::UNKNOWN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub class: u8,
    pub series: Vec<f64>,
    pub pixels: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestCentroid {
    pub num_classes: usize,
    pub windows: usize,
    pub temperature: f64,
    pub centroids: Vec<Centroid>,
    /// Classes without training pixels.
    pub missing: Vec<u8>,
}

/// Running per-class sums of NDVI series.
#[derive(Debug, Clone)]
pub struct CentroidAccumulator {
    windows: usize,
    sums: Vec<Vec<f64>>,
    counts: Vec<u64>,
}

impl CentroidAccumulator {
    pub fn new(num_classes: usize, windows: usize) -> Self {
        CentroidAccumulator {
            windows,
            sums: vec![vec![0.0; windows]; num_classes + 1],
            counts: vec![0; num_classes + 1],
        }
    }

    /// Adds every labelled pixel of one grid.
    pub fn add(&mut self, ndvi: ArrayView3<'_, f32>, labels: &Array2<u8>) -> Result<()> {
        let (t, h, w) = ndvi.dim();
        if t != self.windows || labels.dim() != (h, w) {
            return Err(Error::Shape(format!(
                "NDVI {:?} with labels {:?}, expected {} windows",
                ndvi.dim(),
                labels.dim(),
                self.windows
            )));
        }
        let k = self.counts.len() - 1;
        for ((i, j), &c) in labels.indexed_iter() {
            if c == UNKNOWN {
                continue;
            }
            if c as usize > k {
                return Err(Error::Contract(format!(
                    "label code {c} outside {k} classes"
                )));
            }
            let sum = &mut self.sums[c as usize];
            for (s, &v) in sum.iter_mut().zip(ndvi.slice(ndarray::s![.., i, j])) {
                *s += v as f64;
            }
            self.counts[c as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(mut self, other: CentroidAccumulator) -> Self {
        for (a, b) in self.sums.iter_mut().zip(other.sums) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self
    }

    pub fn finish(self, temperature: f64) -> Result<NearestCentroid> {
        let num_classes = self.counts.len() - 1;
        let mut centroids = Vec::new();
        let mut missing = Vec::new();
        for k in 1..=num_classes {
            let n = self.counts[k];
            if n == 0 {
                missing.push(k as u8);
                continue;
            }
            centroids.push(Centroid {
                class: k as u8,
                series: self.sums[k].iter().map(|s| s / n as f64).collect(),
                pixels: n,
            });
        }
        if centroids.is_empty() {
            return Err(Error::Empty("training pixels for the stand-in segmenter"));
        }
        Ok(NearestCentroid {
            num_classes,
            windows: self.windows,
            temperature,
            centroids,
            missing,
        })
    }
}

impl NearestCentroid {
    /// `H × W × K` probabilities; every pixel sums to 1.
    pub fn predict(&self, ndvi: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
        let (t, h, w) = ndvi.dim();
        if t != self.windows {
            return Err(Error::Shape(format!(
                "{t} NDVI windows, model has {}",
                self.windows
            )));
        }
        let mut out = Array3::<f32>::zeros((h, w, self.num_classes));
        let mut logits = vec![0.0f64; self.centroids.len()];
        Zip::from(out.lanes_mut(Axis(2)))
            .and(ndvi.lanes(Axis(0)))
            .for_each(|mut probs, series| {
                for (l, c) in logits.iter_mut().zip(&self.centroids) {
                    let mse = series
                        .iter()
                        .zip(&c.series)
                        .map(|(&x, &m)| (x as f64 - m).powi(2))
                        .sum::<f64>()
                        / t.max(1) as f64;
                    *l = -mse.sqrt() / self.temperature;
                }
                let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
                for (l, c) in logits.iter().zip(&self.centroids) {
                    probs[c.class as usize - 1] = ((l - top).exp() / z) as f32;
                }
            });
        Ok(out)
    }
}
