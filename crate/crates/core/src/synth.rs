//! Synthetic scenes and labels for desk-scale runs.
//!
//! A square tile is partitioned into Voronoi fields, each planted with one of
//! a few crops whose NDVI follows a Gaussian green-up at a crop-specific
//! window. Every window gets two acquisitions with disjoint cloud blobs.
//! Ground-truth labels are corrupted with one-pixel boundary jitter and
//! speckle, mapped to raw product codes and written next to a pipeline
//! manifest that runs the whole chain on the generated data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::catalog::ClassCatalog;
use crate::composite::OPAQUE_CLOUD_BIT;
use crate::error::{Error, Result};
use crate::npy::{write_bytes_atomic, write_npy};
use crate::pipeline::manifest::{
    ChipConfig, CompositeConfig, EvaluationConfig, LabelConfig, MockConfig, StageToggles,
    Thresholds,
};
use crate::pipeline::{PipelineManifest, SegmenterMode};
use crate::scene::{write_u16_raster, SceneEntry, SceneManifest};
use crate::UNKNOWN;

pub const SCENE_MANIFEST: &str = "scenes.json";
pub const PIPELINE_MANIFEST: &str = "pipeline.toml";
pub const TRUTH_FILE: &str = "truth.npy";
pub const CORRUPTED_FILE: &str = "corrupted.npy";

#[derive(Debug, Clone)]
pub struct CropProfile {
    /// Catalog class name.
    pub name: String,
    /// Window index of peak greenness (fractional).
    pub peak: f64,
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub tile_id: String,
    pub year: i32,
    pub size: usize,
    pub windows: usize,
    pub window_days: u32,
    pub grids_per_side: usize,
    pub crops: Vec<CropProfile>,
    pub fields: usize,
    /// Gaussian width of the green-up, in windows.
    pub season_width: f64,
    /// Per-pixel, per-scene NDVI noise.
    pub ndvi_noise: f64,
    /// Fraction of label pixels replaced by another crop.
    pub speckle: f64,
    /// Probability that a boundary pixel takes a neighbour's class.
    pub jitter: f64,
    /// Fraction of fields whose reference label is another crop.
    pub field_errors: f64,
    pub cloud_blobs: usize,
    pub cloud_radius: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let crops = [
            ("Corn", 5.0),
            ("Rice", 9.0),
            ("Tomatoes", 13.0),
            ("Almonds", 17.0),
        ]
        .into_iter()
        .map(|(name, peak)| CropProfile {
            name: name.into(),
            peak,
        })
        .collect();
        SynthConfig {
            tile_id: "T00SYN".into(),
            year: 2018,
            size: 128,
            windows: 24,
            window_days: 14,
            grids_per_side: 4,
            crops,
            fields: 40,
            season_width: 2.0,
            ndvi_noise: 0.03,
            speckle: 0.15,
            jitter: 0.5,
            field_errors: 0.0,
            cloud_blobs: 3,
            cloud_radius: 12,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthRegion {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub scene_manifest: PathBuf,
    pub label_raster: PathBuf,
    /// Catalog codes.
    pub truth: Array2<u8>,
    /// Catalog codes.
    pub corrupted: Array2<u8>,
}

/// Surface reflectance of red plus near-infrared; splitting it by NDVI
/// keeps both bands inside `[0, 1]`.
const RED_NIR_SUM: f64 = 0.5;
const BANDS: usize = 10;
const RED: usize = 2;
const NIR: usize = 6;
const CLOUD_DN: u16 = 9000;

fn ndvi_at(crop: &CropProfile, t: f64, width: f64, shift: f64) -> f64 {
    let d = t - crop.peak - shift;
    0.15 + 0.65 * (-d * d / (2.0 * width * width)).exp()
}

/// Index of the nearest seed per pixel.
fn voronoi(size: usize, seeds: &[(f64, f64)]) -> Array2<usize> {
    Array2::from_shape_fn((size, size), |(i, j)| {
        let (best, _) = seeds
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (s, &(y, x))| {
                let d = (i as f64 - y).powi(2) + (j as f64 - x).powi(2);
                if d < acc.1 {
                    (s, d)
                } else {
                    acc
                }
            });
        best
    })
}

/// One-pixel boundary jitter then speckle, both drawn from `rng`.
pub fn corrupt_labels(
    truth: &Array2<u8>,
    codes: &[u8],
    jitter: f64,
    speckle: f64,
    rng: &mut impl Rng,
) -> Array2<u8> {
    let (h, w) = truth.dim();
    let mut out = truth.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        let neighbours: Vec<u8> = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
            .iter()
            .filter_map(|&(di, dj)| {
                let (y, x) = (i as i64 + di, j as i64 + dj);
                (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w)
                    .then(|| truth[(y as usize, x as usize)])
            })
            .filter(|&c| c != truth[(i, j)])
            .collect();
        if !neighbours.is_empty() && rng.gen_bool(jitter) {
            *v = *neighbours.choose(rng).expect("non-empty");
        }
    }
    if codes.len() > 1 {
        for v in out.iter_mut() {
            if rng.gen_bool(speckle) {
                let others: Vec<u8> = codes.iter().copied().filter(|&c| c != *v).collect();
                *v = *others.choose(rng).expect("two or more codes");
            }
        }
    }
    out
}

/// Matching pixels and non-unknown pixels of `labels` against `truth`.
pub fn agreement(truth: &Array2<u8>, labels: &Array2<u8>) -> (u64, u64) {
    truth
        .iter()
        .zip(labels.iter())
        .filter(|(_, &l)| l != UNKNOWN)
        .fold((0, 0), |(a, n), (&t, &l)| (a + u64::from(t == l), n + 1))
}

pub fn generate(dir: &Path, cfg: &SynthConfig) -> Result<SynthRegion> {
    if cfg.crops.is_empty() || cfg.size == 0 || cfg.windows == 0 || cfg.fields < cfg.crops.len() {
        return Err(Error::Config(
            "synthetic region needs crops, a non-empty tile, windows and a field per crop".into(),
        ));
    }
    let catalog = ClassCatalog::california();
    let mut codes = Vec::new();
    let mut raw_codes = Vec::new();
    for crop in &cfg.crops {
        let code = catalog
            .code_of(&crop.name)
            .ok_or_else(|| Error::Config(format!("unknown class {:?}", crop.name)))?;
        let raw = catalog
            .entry(code)
            .and_then(|e| e.source_codes.first().copied());
        codes.push(code);
        raw_codes
            .push(raw.ok_or_else(|| Error::Config(format!("{} has no source code", crop.name)))?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.size;

    let seeds: Vec<(f64, f64)> = (0..cfg.fields)
        .map(|_| (rng.gen_range(0.0..n as f64), rng.gen_range(0.0..n as f64)))
        .collect();
    let mut field_crop: Vec<usize> = (0..cfg.fields).map(|f| f % cfg.crops.len()).collect();
    field_crop.shuffle(&mut rng);
    let field = voronoi(n, &seeds);
    let crop_of = field.mapv(|f| field_crop[f]);
    let shift: Vec<f64> = (0..cfg.fields).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let truth = crop_of.mapv(|c| codes[c]);

    let scenes_dir = dir.join("scenes");
    std::fs::create_dir_all(&scenes_dir).map_err(|e| Error::io(&scenes_dir, e))?;
    let noise =
        Normal::new(0.0, cfg.ndvi_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let start =
        NaiveDate::from_ymd_opt(cfg.year, 1, 1).ok_or_else(|| Error::Config("year".into()))?;
    let mut entries = Vec::new();
    for window in 0..cfg.windows {
        let first = cloud_mask(n, cfg.cloud_blobs, cfg.cloud_radius, None, &mut rng);
        let second = cloud_mask(n, cfg.cloud_blobs, cfg.cloud_radius, Some(&first), &mut rng);
        for (k, clouds) in [first, second].into_iter().enumerate() {
            let day = window as u32 * cfg.window_days + (1 + k as u32 * cfg.window_days / 2);
            let date = start + Duration::days(day as i64);
            let t = day as f64 / cfg.window_days as f64 - 0.5;
            let mut bands = Array3::<u16>::zeros((BANDS, n, n));
            let mut qa = Array2::<u16>::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    if clouds[(i, j)] {
                        qa[(i, j)] = OPAQUE_CLOUD_BIT;
                        for b in 0..BANDS {
                            bands[(b, i, j)] = CLOUD_DN;
                        }
                        continue;
                    }
                    let f = field[(i, j)];
                    let v = (ndvi_at(&cfg.crops[crop_of[(i, j)]], t, cfg.season_width, shift[f])
                        + noise.sample(&mut rng))
                    .clamp(-0.9, 0.95);
                    for b in 0..BANDS {
                        let r = match b {
                            RED => RED_NIR_SUM * (1.0 - v) / 2.0,
                            NIR => RED_NIR_SUM * (1.0 + v) / 2.0,
                            _ => 0.05 + 0.02 * b as f64 + 0.05 * v * ((b % 3) as f64 + 1.0),
                        };
                        bands[(b, i, j)] = (r.clamp(0.0, 1.0) * 10_000.0).round() as u16;
                    }
                }
            }
            let stem = format!("{}_{}", cfg.tile_id, date.format("%Y%m%d"));
            let mut band_paths = Vec::new();
            for b in 0..BANDS {
                let rel = PathBuf::from("scenes").join(format!("{stem}_B{b:02}.tif"));
                write_u16_raster(
                    &dir.join(&rel),
                    &bands.index_axis(ndarray::Axis(0), b).to_owned(),
                )?;
                band_paths.push(rel);
            }
            let qa_rel = PathBuf::from("scenes").join(format!("{stem}_QA60.tif"));
            write_u16_raster(&dir.join(&qa_rel), &qa)?;
            entries.push(SceneEntry {
                tile_id: cfg.tile_id.clone(),
                acquired: date.format("%Y-%m-%d").to_string(),
                bands: band_paths,
                qa: qa_rel,
            });
        }
    }
    let scene_manifest = dir.join(SCENE_MANIFEST);
    let text = serde_json::to_string_pretty(&SceneManifest { scenes: entries })
        .map_err(|e| Error::format(&scene_manifest, e))?;
    write_bytes_atomic(&scene_manifest, text.as_bytes())?;

    let mut mislabelled: Vec<usize> = (0..cfg.fields).collect();
    mislabelled.shuffle(&mut rng);
    mislabelled.truncate((cfg.field_errors.clamp(0.0, 1.0) * cfg.fields as f64).round() as usize);
    let mut field_label: Vec<u8> = field_crop.iter().map(|&c| codes[c]).collect();
    if codes.len() > 1 {
        for &f in &mislabelled {
            let others: Vec<u8> = codes
                .iter()
                .copied()
                .filter(|&c| c != field_label[f])
                .collect();
            field_label[f] = *others.choose(&mut rng).expect("two or more codes");
        }
    }
    let reference = field.mapv(|f| field_label[f]);
    let corrupted = corrupt_labels(&reference, &codes, cfg.jitter, cfg.speckle, &mut rng);
    let to_raw = |c: u8| raw_codes[codes.iter().position(|&k| k == c).expect("planted code")];
    let label_raster = dir
        .join("labels")
        .join(format!("{}_{}_CDL.npy", cfg.tile_id, cfg.year));
    std::fs::create_dir_all(label_raster.parent().expect("has parent"))
        .map_err(|e| Error::io(&label_raster, e))?;
    write_npy(&label_raster, &corrupted.mapv(to_raw))?;
    write_npy(&dir.join(TRUTH_FILE), &truth)?;
    write_npy(&dir.join(CORRUPTED_FILE), &corrupted)?;

    let manifest = dir.join(PIPELINE_MANIFEST);
    pipeline_manifest(cfg, dir, &label_raster).save(&manifest)?;
    Ok(SynthRegion {
        dir: dir.to_path_buf(),
        manifest,
        scene_manifest,
        label_raster,
        truth,
        corrupted,
    })
}

/// Disc-shaped clouds; with `avoid`, discs never touch its cloudy pixels.
fn cloud_mask(
    n: usize,
    blobs: usize,
    radius: usize,
    avoid: Option<&Array2<bool>>,
    rng: &mut impl Rng,
) -> Array2<bool> {
    let mut mask = Array2::from_elem((n, n), false);
    let r2 = (radius * radius) as i64;
    let disc = |cy: i64, cx: i64| {
        (0..n)
            .flat_map(move |i| (0..n).map(move |j| (i, j)))
            .filter(move |&(i, j)| (i as i64 - cy).pow(2) + (j as i64 - cx).pow(2) <= r2)
    };
    for _ in 0..blobs {
        for _attempt in 0..50 {
            let (cy, cx) = (rng.gen_range(0..n) as i64, rng.gen_range(0..n) as i64);
            if avoid.is_some_and(|a| disc(cy, cx).any(|p| a[p])) {
                continue;
            }
            for p in disc(cy, cx) {
                mask[p] = true;
            }
            break;
        }
    }
    mask
}

fn pipeline_manifest(cfg: &SynthConfig, dir: &Path, label_raster: &Path) -> PipelineManifest {
    let rel = label_raster
        .strip_prefix(dir)
        .unwrap_or(label_raster)
        .to_path_buf();
    PipelineManifest {
        year: cfg.year,
        output_root: PathBuf::from("out"),
        scene_manifest: PathBuf::from(SCENE_MANIFEST),
        class_catalog: None,
        segmenter: SegmenterMode::Mock,
        probs_dir: None,
        label_rasters: BTreeMap::from([(cfg.tile_id.clone(), rel)]),
        composite: CompositeConfig {
            windows: cfg.windows,
            window_days: cfg.window_days,
            grids_per_side: cfg.grids_per_side,
            ..CompositeConfig::default()
        },
        labels: LabelConfig {
            resample_factor: 1,
            ..LabelConfig::default()
        },
        thresholds: Thresholds {
            min_support: 20,
            min_known_fraction: 0.05,
            ..Thresholds::default()
        },
        split: Default::default(),
        ndvi: Default::default(),
        mock: MockConfig::default(),
        stages: StageToggles::default(),
        chips: ChipConfig {
            window: cfg.windows / 2,
            ..ChipConfig::default()
        },
        evaluation: EvaluationConfig::default(),
        base_dir: dir.to_path_buf(),
    }
}
