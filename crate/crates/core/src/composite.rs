//! Cloud masking and best-pixel bi-weekly compositing.

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use ndarray::{Array2, Array3, Array4, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// QA60 bit flagging opaque clouds.
pub const OPAQUE_CLOUD_BIT: u16 = 1 << 10;
/// QA60 bit flagging cirrus clouds.
pub const CIRRUS_BIT: u16 = 1 << 11;

/// One acquisition of a tile, all bands on the common 10 m pixel grid.
#[derive(Debug, Clone)]
pub struct Scene {
    pub tile_id: String,
    pub acquired: NaiveDateTime,
    /// `H × W × C` raw digital numbers.
    pub reflectance: Array3<f32>,
    /// `H × W` quality words.
    pub qa: Array2<u16>,
}

impl Scene {
    pub fn new(
        tile_id: impl Into<String>,
        acquired: NaiveDateTime,
        reflectance: Array3<f32>,
        qa: Array2<u16>,
    ) -> Result<Self> {
        let (h, w, _) = reflectance.dim();
        if qa.dim() != (h, w) {
            return Err(Error::Shape(format!(
                "reflectance is {h}×{w} but QA band is {:?}",
                qa.dim()
            )));
        }
        Ok(Scene {
            tile_id: tile_id.into(),
            acquired,
            reflectance,
            qa,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.reflectance.dim()
    }
}

/// `true` marks a cloud-contaminated pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudMask {
    pub mask: Array2<bool>,
}

impl CloudMask {
    pub fn cloudy_count(&self) -> usize {
        self.mask.iter().filter(|&&c| c).count()
    }
}

pub fn is_cloudy(qa: u16) -> bool {
    qa & (OPAQUE_CLOUD_BIT | CIRRUS_BIT) != 0
}

pub fn decode_cloud_mask(qa: ArrayView2<'_, u16>) -> CloudMask {
    CloudMask {
        mask: qa.mapv(is_cloudy),
    }
}

/// Fraction of cloud-free pixels.
pub fn score_scene(scene: &Scene, mask: &CloudMask) -> Result<f64> {
    let (h, w, _) = scene.dims();
    if mask.mask.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "cloud mask is {:?} but scene is {h}×{w}",
            mask.mask.dim()
        )));
    }
    let total = h * w;
    if total == 0 {
        return Err(Error::Empty("scene"));
    }
    Ok((total - mask.cloudy_count()) as f64 / total as f64)
}

#[derive(Debug, Clone)]
pub struct Composite {
    /// `H × W × C`
    pub data: Array3<f32>,
    /// `false` when the window had no scene at all.
    pub valid: bool,
}

/// Best-pixel mosaic of the scenes of one window.
///
/// Scenes are ranked by cloud-free fraction (stable, so equal scores keep
/// input order). Each pixel takes the first clear value in rank order and
/// falls back to the best-ranked scene where every scene is cloudy. An
/// empty window yields zeros with `valid = false`.
pub fn build_composite(scenes: &[Scene], shape: (usize, usize, usize)) -> Result<Composite> {
    if scenes.is_empty() {
        return Ok(Composite {
            data: Array3::zeros(shape),
            valid: false,
        });
    }
    let tile = &scenes[0].tile_id;
    for s in scenes {
        if s.dims() != shape {
            return Err(Error::Shape(format!(
                "scene {} is {:?}, expected {:?}",
                s.acquired,
                s.dims(),
                shape
            )));
        }
        if &s.tile_id != tile {
            return Err(Error::Shape(format!(
                "window mixes tiles {tile} and {}",
                s.tile_id
            )));
        }
    }

    let mut ranked = scenes
        .iter()
        .map(|s| {
            let mask = decode_cloud_mask(s.qa.view());
            let score = score_scene(s, &mask)?;
            Ok((s, mask, score))
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2));

    let (h, w, _) = shape;
    // Index into `ranked` of the scene supplying each pixel.
    let mut source = Array2::<usize>::zeros((h, w));
    Zip::indexed(&mut source).par_for_each(|(i, j), src| {
        *src = ranked
            .iter()
            .position(|(_, mask, _)| !mask.mask[(i, j)])
            .unwrap_or(0);
    });

    let mut data = Array3::<f32>::zeros(shape);
    Zip::indexed(data.lanes_mut(Axis(2))).par_for_each(|(i, j), mut px| {
        px.assign(
            &ranked[source[(i, j)]]
                .0
                .reflectance
                .slice(ndarray::s![i, j, ..]),
        );
    });
    Ok(Composite { data, valid: true })
}

/// Calendar windows of one year: `count` windows of `length_days` days
/// starting January 1, the last one absorbing the remainder of the year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScheme {
    pub year: i32,
    pub count: usize,
    pub length_days: u32,
}

impl WindowScheme {
    pub fn new(year: i32, count: usize, length_days: u32) -> Result<Self> {
        if count == 0 || length_days == 0 {
            return Err(Error::Config(
                "window count and length must be positive".into(),
            ));
        }
        let days_in_year = if NaiveDate::from_ymd_opt(year, 12, 31)
            .ok_or_else(|| Error::Config(format!("invalid year {year}")))?
            .leap_year()
        {
            366
        } else {
            365
        };
        if count as u32 * length_days > days_in_year {
            return Err(Error::Config(format!(
                "{count} windows of {length_days} days exceed the year"
            )));
        }
        Ok(WindowScheme {
            year,
            count,
            length_days,
        })
    }

    pub fn standard(year: i32) -> Self {
        WindowScheme {
            year,
            count: 24,
            length_days: 14,
        }
    }

    /// Window index of an acquisition time.
    pub fn window_of(&self, t: NaiveDateTime) -> Result<usize> {
        if t.year() != self.year {
            return Err(Error::Config(format!(
                "acquisition {t} lies outside year {}",
                self.year
            )));
        }
        let day = t.ordinal0() / self.length_days;
        Ok((day as usize).min(self.count - 1))
    }

    /// First day-of-year (0-based) of window `k`.
    pub fn start_day(&self, k: usize) -> u32 {
        k as u32 * self.length_days
    }
}

/// Yearly stack of one tile: `T × H × W × C` plus per-window validity.
#[derive(Debug, Clone)]
pub struct TileStack {
    pub tile_id: String,
    pub year: i32,
    pub data: Array4<f32>,
    pub validity: Vec<bool>,
}

/// Groups a tile's scenes into windows and composites each window.
pub fn composite_year(
    tile_id: &str,
    scenes: Vec<Scene>,
    scheme: &WindowScheme,
    shape: (usize, usize, usize),
) -> Result<TileStack> {
    let mut windows: Vec<Vec<Scene>> = vec![Vec::new(); scheme.count];
    for scene in scenes {
        if scene.tile_id != tile_id {
            return Err(Error::Shape(format!(
                "scene of tile {} passed to tile {tile_id}",
                scene.tile_id
            )));
        }
        let k = scheme.window_of(scene.acquired)?;
        windows[k].push(scene);
    }
    let composites = windows
        .par_iter()
        .map(|w| build_composite(w, shape))
        .collect::<Result<Vec<_>>>()?;

    let (h, w, c) = shape;
    let mut data = Array4::<f32>::zeros((scheme.count, h, w, c));
    let mut validity = Vec::with_capacity(scheme.count);
    for (t, comp) in composites.into_iter().enumerate() {
        data.index_axis_mut(Axis(0), t).assign(&comp.data);
        validity.push(comp.valid);
    }
    Ok(TileStack {
        tile_id: tile_id.to_string(),
        year: scheme.year,
        data,
        validity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn at(day: u32) -> NaiveDateTime {
        NaiveDate::from_yo_opt(2018, day + 1)
            .unwrap()
            .and_hms_opt(18, 30, 0)
            .unwrap()
    }

    fn scene(value: f32, qa: Array2<u16>) -> Scene {
        let (h, w) = qa.dim();
        Scene::new("T11SKA", at(10), Array3::from_elem((h, w, 2), value), qa).unwrap()
    }

    #[test]
    fn qa_words_decode() {
        let qa = ndarray::arr2(&[[0u16, 1024, 2048, 3072, 1]]);
        let mask = decode_cloud_mask(qa.view());
        assert_eq!(
            mask.mask.row(0).to_vec(),
            vec![false, true, true, true, false]
        );
    }

    #[test]
    fn score_counts_clear_pixels() {
        let clear = scene(1.0, Array2::zeros((4, 4)));
        let mask = decode_cloud_mask(clear.qa.view());
        assert_eq!(score_scene(&clear, &mask).unwrap(), 1.0);

        let mut qa = Array2::zeros((4, 4));
        qa.slice_mut(ndarray::s![..2, ..]).fill(OPAQUE_CLOUD_BIT);
        let half = scene(1.0, qa);
        let mask = decode_cloud_mask(half.qa.view());
        assert_eq!(score_scene(&half, &mask).unwrap(), 0.5);

        let wrong = CloudMask {
            mask: Array2::from_elem((3, 4), false),
        };
        assert!(matches!(score_scene(&half, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn score_matches_pixel_count_on_random_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let qa = Array2::from_shape_fn((32, 32), |_| {
            if rng.gen_bool(0.3) {
                CIRRUS_BIT
            } else {
                rng.gen_range(0..1024)
            }
        });
        let s = scene(0.0, qa.clone());
        let mut clear = 0usize;
        for i in 0..32 {
            for j in 0..32 {
                if qa[(i, j)] & 0x0C00 == 0 {
                    clear += 1;
                }
            }
        }
        let mask = decode_cloud_mask(s.qa.view());
        assert_eq!(score_scene(&s, &mask).unwrap(), clear as f64 / 1024.0);
    }

    #[test]
    fn cloudy_pixel_taken_from_clear_scene() {
        // A is the better scene overall but cloudy at (0,0).
        let mut qa_a = Array2::zeros((2, 2));
        qa_a[(0, 0)] = OPAQUE_CLOUD_BIT;
        let mut qa_b = Array2::from_elem((2, 2), OPAQUE_CLOUD_BIT);
        qa_b[(0, 0)] = 0;
        let a = scene(1.0, qa_a);
        let b = scene(2.0, qa_b);
        let comp = build_composite(&[b, a], (2, 2, 2)).unwrap();
        assert!(comp.valid);
        assert_eq!(comp.data[(0, 0, 0)], 2.0);
        assert_eq!(comp.data[(1, 1, 1)], 1.0);
    }

    #[test]
    fn all_cloudy_pixel_uses_best_scene() {
        let mut qa_a = Array2::zeros((2, 2));
        qa_a[(0, 0)] = OPAQUE_CLOUD_BIT;
        let b = scene(2.0, Array2::from_elem((2, 2), CIRRUS_BIT));
        let a = scene(1.0, qa_a);
        let comp = build_composite(&[b, a], (2, 2, 2)).unwrap();
        assert_eq!(comp.data[(0, 0, 0)], 1.0);
    }

    #[test]
    fn single_clear_scene_is_identity() {
        let refl = Array3::from_shape_fn((3, 4, 5), |(i, j, c)| (i * 100 + j * 10 + c) as f32);
        let s = Scene::new("T", at(0), refl.clone(), Array2::zeros((3, 4))).unwrap();
        let comp = build_composite(&[s], (3, 4, 5)).unwrap();
        assert_eq!(comp.data, refl);
    }

    #[test]
    fn empty_window_is_zero_and_invalid() {
        let comp = build_composite(&[], (2, 3, 4)).unwrap();
        assert!(!comp.valid);
        assert!(comp.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let s = scene(1.0, Array2::zeros((2, 2)));
        assert!(build_composite(&[s], (3, 3, 2)).is_err());
        assert!(Scene::new("T", at(0), Array3::zeros((2, 2, 1)), Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn windows_cover_the_year() {
        let scheme = WindowScheme::standard(2018);
        assert_eq!(scheme.window_of(at(0)).unwrap(), 0);
        assert_eq!(scheme.window_of(at(13)).unwrap(), 0);
        assert_eq!(scheme.window_of(at(14)).unwrap(), 1);
        assert_eq!(scheme.window_of(at(335)).unwrap(), 23);
        assert_eq!(scheme.window_of(at(364)).unwrap(), 23);
        let other_year = NaiveDate::from_ymd_opt(2019, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        assert!(scheme.window_of(other_year).is_err());
        assert!(WindowScheme::new(2018, 27, 14).is_err());
    }

    #[test]
    fn empty_windows_stay_in_calendar_position() {
        let scheme = WindowScheme::standard(2018);
        let s = Scene::new(
            "T",
            at(30),
            Array3::from_elem((2, 2, 1), 5.0),
            Array2::zeros((2, 2)),
        )
        .unwrap();
        let stack = composite_year("T", vec![s], &scheme, (2, 2, 1)).unwrap();
        assert_eq!(stack.data.dim(), (24, 2, 2, 1));
        assert_eq!(stack.validity.iter().filter(|v| **v).count(), 1);
        assert!(stack.validity[2]);
        assert_eq!(stack.data[(2, 0, 0, 0)], 5.0);
    }
}
