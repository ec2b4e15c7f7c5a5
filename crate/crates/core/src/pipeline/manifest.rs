//! Pipeline manifest: inputs, output root, thresholds and stage toggles.
//!
//! Manifests are TOML (or JSON for a `.json` extension). Relative paths
//! resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::ClassCatalog;
use crate::composite::WindowScheme;
use crate::curation::CurationThresholds;
use crate::error::{Error, Result};
use crate::eval::{EvalSettings, FractionBand, NdviBands, THRESHOLD_LADDER};
use crate::normalize::PercentileClip;
use crate::region_grow::GrowParams;
use crate::split::{Split, SplitTargets};

/// Environment variable overriding `output_root`.
pub const OUTPUT_ROOT_ENV: &str = "CROPLABEL_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterMode {
    /// Probabilities from the built-in nearest-centroid model.
    #[default]
    Mock,
    /// `*_PROBS.npy` files supplied in `probs_dir`.
    ExternalProbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompositeConfig {
    pub windows: usize,
    pub window_days: u32,
    pub grids_per_side: usize,
    /// Band names in channel order.
    pub bands: Vec<String>,
    pub percentiles: PercentileClip,
}

impl Default for CompositeConfig {
    fn default() -> Self {
        CompositeConfig {
            windows: 24,
            window_days: 14,
            grids_per_side: 10,
            bands: [
                "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B11", "B12",
            ]
            .map(String::from)
            .to_vec(),
            percentiles: PercentileClip::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    /// Label pixel size over image pixel size.
    pub resample_factor: usize,
    pub max_component_size: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            resample_factor: 3,
            max_component_size: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub anchor: f64,
    pub grow: f64,
    /// Minimum agreement pixels for a characteristic series.
    pub min_support: u64,
    pub min_known_fraction: f64,
    pub min_crop_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        let curation = CurationThresholds::default();
        Thresholds {
            anchor: 0.9,
            grow: 0.3,
            min_support: 100,
            min_known_fraction: curation.min_known_fraction,
            min_crop_fraction: curation.min_crop_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    /// Softmax temperature over RMS NDVI distances.
    pub temperature: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig { temperature: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub composite: bool,
    pub prep_labels: bool,
    pub curate: bool,
    pub split: bool,
    pub refine: bool,
    pub evaluate: bool,
    pub report: bool,
    pub chips: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            composite: true,
            prep_labels: true,
            curate: true,
            split: true,
            refine: true,
            evaluate: true,
            report: true,
            chips: true,
        }
    }
}

/// Which grids an evaluation or chip export covers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScope {
    Train,
    Val,
    #[default]
    Test,
    /// Every accepted grid.
    Accepted,
    /// Every grid of every tile.
    All,
}

impl GridScope {
    pub fn includes(self, split: Split) -> bool {
        match self {
            GridScope::Train => split == Split::Train,
            GridScope::Val => split == Split::Val,
            GridScope::Test => split == Split::Test,
            GridScope::Accepted => split != Split::Excluded,
            GridScope::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub scope: GridScope,
    pub curve_points: usize,
    pub ladder: Vec<f64>,
    pub band: FractionBand,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            scope: GridScope::Test,
            curve_points: 101,
            ladder: THRESHOLD_LADDER.to_vec(),
            band: FractionBand::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChipConfig {
    pub scope: GridScope,
    /// Composite window shown in the RGB chip.
    pub window: usize,
    /// Channels used as red, green, blue.
    pub rgb: [usize; 3],
    /// 0 exports every grid in scope.
    pub max_grids: usize,
}

impl Default for ChipConfig {
    fn default() -> Self {
        ChipConfig {
            scope: GridScope::Test,
            window: 12,
            rgb: [2, 1, 0],
            max_grids: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineManifest {
    pub year: i32,
    pub output_root: PathBuf,
    pub scene_manifest: PathBuf,
    /// Built-in California catalog when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_catalog: Option<PathBuf>,
    #[serde(default)]
    pub segmenter: SegmenterMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs_dir: Option<PathBuf>,
    /// Tile id → raw label raster (.npy, u8 product codes).
    pub label_rasters: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub composite: CompositeConfig,
    #[serde(default)]
    pub labels: LabelConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub split: SplitTargets,
    #[serde(default)]
    pub ndvi: NdviBands,
    #[serde(default)]
    pub mock: MockConfig,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default)]
    pub chips: ChipConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

impl PipelineManifest {
    pub fn parse_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: PipelineManifest =
            toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        m.base_dir = base_dir.to_path_buf();
        Ok(m)
    }

    pub fn parse_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: PipelineManifest =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        m.base_dir = base_dir.to_path_buf();
        Ok(m)
    }

    /// Reads a manifest without checking it; see [`validate`](Self::validate).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        if is_json(path) {
            Self::parse_json(&text, &base)
        } else {
            Self::parse_toml(&text, &base)
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = if is_json(path) {
            serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?
        } else {
            self.to_toml()?
        };
        crate::npy::write_bytes_atomic(path, text.as_bytes())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_root(&self) -> PathBuf {
        self.resolve(&self.output_root)
    }

    pub fn catalog(&self) -> Result<ClassCatalog> {
        match &self.class_catalog {
            Some(p) => ClassCatalog::load(&self.resolve(p)),
            None => Ok(ClassCatalog::california()),
        }
    }

    pub fn window_scheme(&self) -> Result<WindowScheme> {
        WindowScheme::new(
            self.year,
            self.composite.windows,
            self.composite.window_days,
        )
    }

    pub fn grow_params(&self) -> GrowParams {
        GrowParams {
            anchor: self.thresholds.anchor as f32,
            grow: self.thresholds.grow as f32,
        }
    }

    pub fn curation(&self) -> CurationThresholds {
        CurationThresholds {
            min_known_fraction: self.thresholds.min_known_fraction,
            min_crop_fraction: self.thresholds.min_crop_fraction,
        }
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            min_support: self.thresholds.min_support,
            ladder: self.evaluation.ladder.clone(),
            band: self.evaluation.band,
            curve_points: self.evaluation.curve_points,
        }
    }

    /// Checks ranges and that referenced inputs exist.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        self.window_scheme()?;
        self.grow_params().validate()?;
        self.split.validate()?;
        let c = &self.composite;
        if c.grids_per_side == 0 {
            return cfg("composite.grids_per_side must be positive".into());
        }
        if c.bands.is_empty() {
            return cfg("composite.bands is empty".into());
        }
        let p = c.percentiles;
        if !(0.0 <= p.lower && p.lower < p.upper && p.upper <= 100.0) {
            return cfg(format!("percentile bounds {} / {}", p.lower, p.upper));
        }
        if self.labels.resample_factor == 0 {
            return cfg("labels.resample_factor must be positive".into());
        }
        for (name, f) in [
            ("min_known_fraction", self.thresholds.min_known_fraction),
            ("min_crop_fraction", self.thresholds.min_crop_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return cfg(format!("thresholds.{name} = {f} outside [0, 1]"));
            }
        }
        let channels = c.bands.len();
        if self.ndvi.red >= channels || self.ndvi.nir >= channels {
            return cfg(format!(
                "ndvi bands {}/{} outside {channels} channels",
                self.ndvi.red, self.ndvi.nir
            ));
        }
        if self.chips.rgb.iter().any(|&b| b >= channels) {
            return cfg(format!(
                "chips.rgb {:?} outside {channels} channels",
                self.chips.rgb
            ));
        }
        if self.chips.window >= c.windows {
            return cfg(format!(
                "chips.window {} outside {} windows",
                self.chips.window, c.windows
            ));
        }
        if self.mock.temperature.is_nan() || self.mock.temperature <= 0.0 {
            return cfg("mock.temperature must be positive".into());
        }
        if self.evaluation.curve_points < 2 {
            return cfg("evaluation.curve_points must be at least 2".into());
        }
        if self.evaluation.ladder.is_empty() {
            return cfg("evaluation.ladder is empty".into());
        }
        let b = self.evaluation.band;
        if !(0.0 <= b.lower && b.lower <= b.upper && b.upper <= 1.0) {
            return cfg(format!("evaluation.band [{}, {}]", b.lower, b.upper));
        }
        if self.label_rasters.is_empty() {
            return cfg("label_rasters is empty".into());
        }
        let must_exist = |what: &str, p: &Path| {
            let full = self.resolve(p);
            if full.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{what} {} does not exist",
                    full.display()
                )))
            }
        };
        must_exist("scene manifest", &self.scene_manifest)?;
        for (tile, p) in &self.label_rasters {
            must_exist(&format!("label raster for {tile}"), p)?;
        }
        if let Some(p) = &self.class_catalog {
            must_exist("class catalog", p)?;
        }
        match (self.segmenter, &self.probs_dir) {
            (SegmenterMode::ExternalProbs, None) => {
                return cfg("segmenter = \"external_probs\" needs probs_dir".into());
            }
            (SegmenterMode::ExternalProbs, Some(p)) => must_exist("probs_dir", p)?,
            _ => {}
        }
        self.catalog()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
year = 2018
output_root = "out"
scene_manifest = "scenes.json"

[label_rasters]
T11SKA = "labels/T11SKA.npy"
"#;

    #[test]
    fn defaults_fill_in() {
        let m = PipelineManifest::parse_toml(MINIMAL, Path::new("/data")).unwrap();
        assert_eq!(m.composite.windows, 24);
        assert_eq!(m.composite.bands.len(), 10);
        assert_eq!(m.thresholds.anchor, 0.9);
        assert_eq!(m.grow_params(), GrowParams::default());
        assert_eq!(m.thresholds.min_support, 100);
        assert_eq!(m.labels.max_component_size, 4);
        assert_eq!(m.segmenter, SegmenterMode::Mock);
        assert_eq!(m.output_root(), PathBuf::from("/data/out"));
    }

    #[test]
    fn round_trip_is_identity() {
        let mut m = PipelineManifest::parse_toml(MINIMAL, Path::new("/data")).unwrap();
        m.thresholds.min_known_fraction = 0.1;
        m.segmenter = SegmenterMode::ExternalProbs;
        m.probs_dir = Some("probs".into());
        m.evaluation.scope = GridScope::All;
        let text = m.to_toml().unwrap();
        let back = PipelineManifest::parse_toml(&text, Path::new("/data")).unwrap();
        assert_eq!(back, m);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(
            PipelineManifest::parse_json(&json, Path::new("/data")).unwrap(),
            m
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[thresholds]\nanchr = 0.8\n");
        assert!(matches!(
            PipelineManifest::parse_toml(&text, Path::new(".")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn validation_catches_ranges_and_missing_paths() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = PipelineManifest::parse_toml(MINIMAL, dir.path()).unwrap();
        let err = m.validate().unwrap_err();
        assert!(err.to_string().contains("scenes.json"), "{err}");

        std::fs::write(dir.path().join("scenes.json"), "{\"scenes\": []}").unwrap();
        std::fs::create_dir(dir.path().join("labels")).unwrap();
        std::fs::write(dir.path().join("labels/T11SKA.npy"), b"").unwrap();
        m.validate().unwrap();

        m.thresholds.anchor = 0.4;
        assert!(m.validate().is_err());
        m.thresholds.anchor = 0.9;
        m.ndvi.nir = 10;
        assert!(m.validate().is_err());
        m.ndvi.nir = 6;
        m.segmenter = SegmenterMode::ExternalProbs;
        assert!(m.validate().is_err());
    }

    #[test]
    fn scopes() {
        assert!(GridScope::Accepted.includes(Split::Val));
        assert!(!GridScope::Accepted.includes(Split::Excluded));
        assert!(GridScope::All.includes(Split::Excluded));
        assert!(!GridScope::Test.includes(Split::Train));
    }
}
