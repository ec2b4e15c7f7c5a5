//! Scene manifests and GeoTIFF band rasters.
//!
//! A scene manifest is a JSON document listing, per acquisition, the tile,
//! the acquisition timestamp, the band rasters (one file per band or
//! multi-band files, concatenated in order) and the QA60 raster. Relative
//! paths resolve against the manifest's directory.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::ColorType;

use crate::composite::Scene;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scenes: Vec<SceneEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub tile_id: String,
    /// ISO-8601 date or date-time.
    pub acquired: String,
    pub bands: Vec<PathBuf>,
    pub qa: PathBuf,
}

impl SceneEntry {
    pub fn acquired(&self) -> Result<NaiveDateTime> {
        parse_timestamp(&self.acquired)
    }

    pub fn files<'a>(&'a self, base: &'a Path) -> impl Iterator<Item = PathBuf> + 'a {
        self.bands
            .iter()
            .chain(std::iter::once(&self.qa))
            .map(move |p| base.join(p))
    }
}

fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.naive_utc());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight"))
        .map_err(|_| Error::Config(format!("unparseable acquisition time {s:?}")))
}

impl SceneManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: SceneManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        for entry in &manifest.scenes {
            entry.acquired()?;
        }
        Ok(manifest)
    }

    pub fn tiles(&self) -> Vec<String> {
        let mut tiles: Vec<String> = self.scenes.iter().map(|s| s.tile_id.clone()).collect();
        tiles.sort();
        tiles.dedup();
        tiles
    }
}

/// A decoded raster: `H × W × samples`.
pub fn read_raster(path: &Path) -> Result<Array3<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = Decoder::new(BufReader::new(file))
        .map_err(|e| Error::format(path, e))?
        .with_limits(Limits::unlimited());
    let (w, h) = decoder.dimensions().map_err(|e| Error::format(path, e))?;
    let samples = match decoder.colortype().map_err(|e| Error::format(path, e))? {
        ColorType::Gray(_) => 1,
        ColorType::GrayA(_) => 2,
        ColorType::RGB(_) => 3,
        ColorType::RGBA(_) | ColorType::CMYK(_) => 4,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported color type {other:?}"),
            ));
        }
    };
    let values: Vec<f32> = match decoder.read_image().map_err(|e| Error::format(path, e))? {
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::U64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
    };
    Array3::from_shape_vec((h as usize, w as usize, samples), values)
        .map_err(|e| Error::format(path, e))
}

/// Writes a single-band 16-bit GeoTIFF raster (no georeferencing tags).
pub fn write_u16_raster(path: &Path, band: &Array2<u16>) -> Result<()> {
    let (h, w) = band.dim();
    let data: Vec<u16> = band.iter().copied().collect();
    crate::npy::write_atomic(path, |out| {
        let mut encoder = TiffEncoder::new(out).map_err(|e| Error::format(path, e))?;
        encoder
            .write_image::<colortype::Gray16>(w as u32, h as u32, &data)
            .map_err(|e| Error::format(path, e))
    })
}

/// Loads one scene, checking that its bands add up to `channels`.
pub fn load_scene(entry: &SceneEntry, base: &Path, channels: usize) -> Result<Scene> {
    let mut bands = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for rel in &entry.bands {
        let path = base.join(rel);
        let raster = read_raster(&path)?;
        let (h, w, _) = raster.dim();
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(Error::Shape(format!(
                    "{} is {h}×{w}, other bands are {}×{}",
                    path.display(),
                    d.0,
                    d.1
                )));
            }
            _ => {}
        }
        bands.push(raster);
    }
    let (h, w) =
        dims.ok_or_else(|| Error::Config(format!("scene {} lists no bands", entry.acquired)))?;
    let total: usize = bands.iter().map(|b| b.dim().2).sum();
    if total != channels {
        return Err(Error::Shape(format!(
            "scene {} of {} has {total} channels, expected {channels}",
            entry.acquired, entry.tile_id
        )));
    }
    let views: Vec<_> = bands.iter().map(|b| b.view()).collect();
    let reflectance =
        ndarray::concatenate(ndarray::Axis(2), &views).map_err(|e| Error::Shape(e.to_string()))?;

    let qa_path = base.join(&entry.qa);
    let qa = read_raster(&qa_path)?;
    if qa.dim().2 != 1 {
        return Err(Error::format(&qa_path, "QA raster must have a single band"));
    }
    let qa = qa.index_axis_move(ndarray::Axis(2), 0).mapv(|v| v as u16);
    if qa.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "{} is {:?}, bands are {h}×{w}",
            qa_path.display(),
            qa.dim()
        )));
    }
    Scene::new(entry.tile_id.clone(), entry.acquired()?, reflectance, qa)
}
