//! PNG chips for visual audit: reference labels, refined labels and one
//! composite window as RGB.

use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use ndarray::{Array2, ArrayView4};

use crate::error::{Error, Result};
use crate::UNKNOWN;

/// Fixed colour per label code; unknown is black.
pub fn label_color(code: u8) -> [u8; 3] {
    if code == UNKNOWN {
        return [0, 0, 0];
    }
    // Golden-angle hue steps keep neighbouring codes distinct.
    let hue = (code as f64 * 137.507_764) % 360.0;
    let (s, v) = if code.is_multiple_of(2) {
        (0.65, 0.95)
    } else {
        (0.85, 0.75)
    };
    hsv_to_rgb(hue, s, v)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r, g, b].map(|u| ((u + m) * 255.0).round() as u8)
}

pub fn label_rgb(codes: &Array2<u8>) -> Vec<u8> {
    codes.iter().flat_map(|&c| label_color(c)).collect()
}

/// RGB bytes of window `window` of a `T × H × W × C` stack in `[0, 1]`.
pub fn composite_rgb(
    stack: ArrayView4<'_, f32>,
    window: usize,
    rgb: [usize; 3],
) -> Result<Vec<u8>> {
    let (t, h, w, c) = stack.dim();
    if window >= t || rgb.iter().any(|&b| b >= c) {
        return Err(Error::Config(format!(
            "chip window {window} / channels {rgb:?} outside a {t}-window, {c}-channel stack"
        )));
    }
    let mut out = Vec::with_capacity(h * w * 3);
    for i in 0..h {
        for j in 0..w {
            for &b in &rgb {
                let v = stack[(window, i, j, b)].clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn write_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    crate::npy::write_atomic(path, |out| {
        PngEncoder::new(out)
            .write_image(rgb, width as u32, height as u32, ExtendedColorType::Rgb8)
            .map_err(|e| Error::format(path, e))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn palette_is_distinct_for_catalog_codes() {
        let colors: Vec<[u8; 3]> = (0..=28).map(label_color).collect();
        for a in 0..colors.len() {
            for b in a + 1..colors.len() {
                assert_ne!(colors[a], colors[b], "codes {a} and {b}");
            }
        }
        assert_eq!(label_color(0), [0, 0, 0]);
    }

    #[test]
    fn composite_scaling() {
        let mut s = Array4::<f32>::zeros((2, 1, 2, 3));
        s[(1, 0, 0, 2)] = 1.0;
        s[(1, 0, 1, 0)] = 0.5;
        let rgb = composite_rgb(s.view(), 1, [2, 1, 0]).unwrap();
        assert_eq!(rgb, vec![255, 0, 0, 0, 0, 128]);
        assert!(composite_rgb(s.view(), 2, [0, 1, 2]).is_err());
    }

    #[test]
    fn png_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        write_png(&p, 2, 1, &[1, 2, 3, 4, 5, 6]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}
