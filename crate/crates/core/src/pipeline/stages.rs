//! Stage graph and runner.
//!
//! Every stage owns one or more directories under the output root. A run
//! first checks that upstream stages have recorded outputs that are still
//! on disk, then compares its fingerprint (stage config plus input hashes)
//! with the last ledger entry and skips the work on a match. Otherwise the
//! stage directories are cleared, the stage writes its artifacts
//! atomically, and on failure everything it wrote is removed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array2, Array3, Array4};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::chips::{composite_rgb, label_rgb, write_png};
use super::ledger::{fingerprint, FileRecord, LedgerEntry, RunLedger};
use super::manifest::{GridScope, PipelineManifest, SegmenterMode};
use super::mock::{CentroidAccumulator, NearestCentroid};
use crate::catalog::ClassCatalog;
use crate::composite::composite_year;
use crate::curation::GridLabelStats;
use crate::error::{Error, Result};
use crate::eval::{analyze_grid, build_report, compute_ndvi, ConfusionMatrix, EvaluationReport};
use crate::grid::{ArtifactKind, GridId};
use crate::labels::{
    preprocess_labels, resample_labels, InclusionThresholds, LabelGrid, LabelStage, MergeReport,
    RawClassStats,
};
use crate::normalize::{clip_normalize, ChannelBounds};
use crate::npy::{read_npy, write_bytes_atomic, write_npy};
use crate::region_grow::{argmax_labels, refine, ProbabilityGrid};
use crate::scene::{load_scene, SceneManifest};
use crate::split::{split_grids, Split};
use crate::tiling::{split_grids as tile_grids, split_labels};
use crate::UNKNOWN;

pub const IMAGES_DIR: &str = "images";
pub const LABELS_DIR: &str = "labels";
pub const CURATION_DIR: &str = "curation";
pub const SPLIT_DIR: &str = "split";
pub const PROBS_DIR: &str = "probs";
pub const REFINED_DIR: &str = "refined";
pub const EVAL_DIR: &str = "eval";
pub const REPORTS_DIR: &str = "reports";
pub const CHIPS_DIR: &str = "chips";

pub const COMPOSITE_INDEX: &str = "composite.json";
pub const LABEL_INDEX: &str = "labels.json";
pub const GRID_STATS: &str = "grid_stats.json";
pub const SPLIT_CSV: &str = "split.csv";
pub const SPLIT_JSON: &str = "split.json";
pub const MOCK_MODEL: &str = "mock_model.json";
pub const REFINE_INDEX: &str = "refine.json";
pub const EVALUATION_JSON: &str = "evaluation.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Composite,
    PrepLabels,
    Curate,
    Split,
    Refine,
    Evaluate,
    Report,
    Chips,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Composite,
        Stage::PrepLabels,
        Stage::Curate,
        Stage::Split,
        Stage::Refine,
        Stage::Evaluate,
        Stage::Report,
        Stage::Chips,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Composite => "composite",
            Stage::PrepLabels => "prep-labels",
            Stage::Curate => "curate",
            Stage::Split => "split",
            Stage::Refine => "refine",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
            Stage::Chips => "chips",
        }
    }

    /// Stages whose outputs this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Composite => &[],
            PrepLabels => &[Composite],
            Curate => &[PrepLabels],
            Split => &[Curate],
            Refine => &[Composite, PrepLabels, Split],
            Evaluate => &[Composite, PrepLabels, Split, Refine],
            Report => &[Evaluate],
            Chips => &[Composite, PrepLabels, Split, Refine],
        }
    }

    pub fn dirs(self) -> &'static [&'static str] {
        match self {
            Stage::Composite => &[IMAGES_DIR],
            Stage::PrepLabels => &[LABELS_DIR],
            Stage::Curate => &[CURATION_DIR],
            Stage::Split => &[SPLIT_DIR],
            Stage::Refine => &[PROBS_DIR, REFINED_DIR],
            Stage::Evaluate => &[EVAL_DIR],
            Stage::Report => &[REPORTS_DIR],
            Stage::Chips => &[CHIPS_DIR],
        }
    }

    fn enabled(self, m: &PipelineManifest) -> bool {
        let s = &m.stages;
        match self {
            Stage::Composite => s.composite,
            Stage::PrepLabels => s.prep_labels,
            Stage::Curate => s.curate,
            Stage::Split => s.split,
            Stage::Refine => s.refine,
            Stage::Evaluate => s.evaluate,
            Stage::Report => s.report,
            Stage::Chips => s.chips,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileIndex {
    pub tile: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    pub scenes: usize,
    pub validity: Vec<bool>,
    pub bounds: Vec<ChannelBounds>,
    pub grids: Vec<GridId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeIndex {
    pub tiles: Vec<TileIndex>,
}

impl CompositeIndex {
    pub fn grids(&self) -> impl Iterator<Item = (&TileIndex, &GridId)> {
        self.tiles
            .iter()
            .flat_map(|t| t.grids.iter().map(move |g| (t, g)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelIndex {
    pub grids: Vec<GridId>,
    pub absent_codes: MergeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationRecord {
    pub stats: GridLabelStats,
    pub known_fraction: f64,
    pub crop_fraction: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedGrid {
    pub grid: GridId,
    /// Share of pixels left unknown by region growing.
    pub unknown_fraction: f64,
    /// Share of pixels whose refined label differs from argmax.
    pub changed_from_argmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineIndex {
    pub segmenter: SegmenterMode,
    pub grids: Vec<RefinedGrid>,
}

/// Files written and warnings raised by one stage run.
#[derive(Default)]
struct StageCtx {
    written: Mutex<Vec<PathBuf>>,
    warnings: Mutex<Vec<String>>,
}

impl StageCtx {
    fn wrote(&self, path: PathBuf) {
        self.written.lock().expect("stage output list").push(path);
    }

    fn warn(&self, message: String) {
        log::warn!("{message}");
        self.warnings
            .lock()
            .expect("stage warning list")
            .push(message);
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::format(path, e))?;
    write_bytes_atomic(path, &bytes)
}

fn fraction(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        n as f64 / total as f64
    }
}

pub struct Pipeline {
    manifest: PipelineManifest,
    catalog: ClassCatalog,
    root: PathBuf,
    seed: u64,
    ledger: RunLedger,
}

impl Pipeline {
    /// Validates the manifest and opens the ledger under the output root.
    pub fn new(manifest: PipelineManifest, seed: u64) -> Result<Self> {
        manifest.validate()?;
        let catalog = manifest.catalog()?;
        let root = manifest.output_root();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let ledger = RunLedger::at(&root);
        Ok(Pipeline {
            manifest,
            catalog,
            root,
            seed,
            ledger,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ledger(&self) -> &RunLedger {
        &self.ledger
    }

    pub fn manifest(&self) -> &PipelineManifest {
        &self.manifest
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    pub fn artifact(&self, dir: &str, grid: &GridId, kind: ArtifactKind) -> PathBuf {
        self.root.join(dir).join(grid.file_name(kind))
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }

    /// Every enabled stage in order.
    pub fn run_all(&self) -> Result<Vec<LedgerEntry>> {
        Stage::ALL
            .into_iter()
            .filter(|s| s.enabled(&self.manifest))
            .map(|s| self.run_stage(s))
            .collect()
    }

    pub fn run_stage(&self, stage: Stage) -> Result<LedgerEntry> {
        let started = chrono::Utc::now().to_rfc3339();
        let clock = Instant::now();
        let mut inputs = BTreeMap::new();
        for &up in stage.upstream() {
            inputs.extend(self.upstream_outputs(up)?);
        }
        let external = self.external_inputs(stage)?;
        let hashed = external
            .par_iter()
            .map(|p| FileRecord::of(p).map(|r| (p.display().to_string(), r)))
            .collect::<Result<Vec<_>>>()?;
        inputs.extend(hashed);
        let fp = fingerprint(stage.name(), &self.stage_config(stage), &inputs);

        if let Some(prev) = self.ledger.latest(stage.name())? {
            let intact = prev
                .outputs
                .iter()
                .all(|(rel, rec)| rec.plausibly_matches(&self.root.join(rel)));
            if prev.fingerprint == fp && intact && !prev.outputs.is_empty() {
                log::info!("{stage}: inputs unchanged, reusing outputs");
                let entry = LedgerEntry {
                    stage: stage.name().into(),
                    fingerprint: fp,
                    started,
                    seconds: clock.elapsed().as_secs_f64(),
                    cache_hit: true,
                    inputs,
                    outputs: prev.outputs,
                    warnings: prev.warnings,
                };
                self.ledger.append(&entry)?;
                return Ok(entry);
            }
        }

        log::info!("{stage}: running");
        self.clear(stage)?;
        let ctx = StageCtx::default();
        let result = self.execute(stage, &ctx);
        let written = ctx.written.into_inner().expect("stage output list");
        if let Err(e) = result {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            let _ = self.clear(stage);
            return Err(e);
        }
        let outputs = written
            .par_iter()
            .map(|p| FileRecord::of(p).map(|r| (self.rel(p), r)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let entry = LedgerEntry {
            stage: stage.name().into(),
            fingerprint: fp,
            started,
            seconds: clock.elapsed().as_secs_f64(),
            cache_hit: false,
            inputs,
            outputs,
            warnings: ctx.warnings.into_inner().expect("stage warning list"),
        };
        self.ledger.append(&entry)?;
        log::info!("{stage}: done in {:.2}s", entry.seconds);
        Ok(entry)
    }

    fn clear(&self, stage: Stage) -> Result<()> {
        for dir in stage.dirs() {
            let path = self.root.join(dir);
            match std::fs::remove_dir_all(&path) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(Error::io(path, e)),
            }
        }
        Ok(())
    }

    fn upstream_outputs(&self, up: Stage) -> Result<BTreeMap<String, FileRecord>> {
        let missing = |detail: String| Error::MissingPrerequisite {
            stage: up.name().to_string(),
            detail,
        };
        let entry = self
            .ledger
            .latest(up.name())?
            .ok_or_else(|| missing("no completed run in the ledger".into()))?;
        if let Some((rel, _)) = entry
            .outputs
            .iter()
            .find(|(rel, rec)| !rec.plausibly_matches(&self.root.join(rel)))
        {
            return Err(missing(format!("{rel} is absent or changed")));
        }
        Ok(entry.outputs)
    }

    fn external_inputs(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        let m = &self.manifest;
        Ok(match stage {
            Stage::Composite => {
                let path = m.resolve(&m.scene_manifest);
                let scenes = SceneManifest::load(&path)?;
                let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
                let mut files = vec![path];
                for s in &scenes.scenes {
                    files.extend(s.files(&base));
                }
                files
            }
            Stage::PrepLabels => {
                let mut files: Vec<PathBuf> =
                    m.label_rasters.values().map(|p| m.resolve(p)).collect();
                files.extend(m.class_catalog.iter().map(|p| m.resolve(p)));
                files
            }
            Stage::Refine if m.segmenter == SegmenterMode::ExternalProbs => {
                let dir = m.resolve(m.probs_dir.as_deref().expect("validated"));
                let index: CompositeIndex =
                    read_json(&self.root.join(IMAGES_DIR).join(COMPOSITE_INDEX))?;
                let mut files = Vec::new();
                for (_, g) in index.grids() {
                    let p = dir.join(g.file_name(ArtifactKind::Probs));
                    if !p.exists() {
                        return Err(Error::Config(format!(
                            "external probabilities missing: {}",
                            p.display()
                        )));
                    }
                    files.push(p);
                }
                files
            }
            _ => Vec::new(),
        })
    }

    fn stage_config(&self, stage: Stage) -> serde_json::Value {
        use serde_json::json;
        let m = &self.manifest;
        let catalog = self.catalog.to_toml();
        match stage {
            Stage::Composite => json!({"year": m.year, "composite": m.composite}),
            Stage::PrepLabels => json!({
                "year": m.year,
                "labels": m.labels,
                "grids_per_side": m.composite.grids_per_side,
                "tiles": m.label_rasters.keys().collect::<Vec<_>>(),
                "catalog": catalog,
            }),
            Stage::Curate => json!({
                "min_known_fraction": m.thresholds.min_known_fraction,
                "min_crop_fraction": m.thresholds.min_crop_fraction,
                "catalog": catalog,
            }),
            Stage::Split => json!({"split": m.split, "seed": self.seed}),
            Stage::Refine => json!({
                "segmenter": m.segmenter,
                "anchor": m.thresholds.anchor,
                "grow": m.thresholds.grow,
                "ndvi": m.ndvi,
                "mock": m.mock,
                "classes": self.catalog.num_classes(),
            }),
            Stage::Evaluate => json!({
                "settings": m.eval_settings(),
                "scope": m.evaluation.scope,
                "ndvi": m.ndvi,
                "catalog": catalog,
            }),
            Stage::Report => json!({}),
            Stage::Chips => json!({"chips": m.chips}),
        }
    }

    fn execute(&self, stage: Stage, ctx: &StageCtx) -> Result<()> {
        match stage {
            Stage::Composite => self.composite(ctx),
            Stage::PrepLabels => self.prep_labels(ctx),
            Stage::Curate => self.curate(ctx),
            Stage::Split => self.split(ctx),
            Stage::Refine => self.refine(ctx),
            Stage::Evaluate => self.evaluate(ctx),
            Stage::Report => self.report(ctx),
            Stage::Chips => self.chips(ctx),
        }
    }

    fn composite(&self, ctx: &StageCtx) -> Result<()> {
        let m = &self.manifest;
        let path = m.resolve(&m.scene_manifest);
        let scenes = SceneManifest::load(&path)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let scheme = m.window_scheme()?;
        let channels = m.composite.bands.len();
        let per_side = m.composite.grids_per_side;
        let dir = self.root.join(IMAGES_DIR);
        let mut tiles = Vec::new();
        for tile in scenes.tiles() {
            let entries: Vec<_> = scenes.scenes.iter().filter(|s| s.tile_id == tile).collect();
            let loaded = entries
                .par_iter()
                .map(|e| load_scene(e, &base, channels))
                .collect::<Result<Vec<_>>>()?;
            let shape = loaded[0].dims();
            let n_scenes = loaded.len();
            let mut stack = composite_year(&tile, loaded, &scheme, shape)?;
            let empty = stack.validity.iter().filter(|v| !**v).count();
            if empty > 0 {
                ctx.warn(format!(
                    "{tile}: {empty} of {} windows have no scene",
                    scheme.count
                ));
            }
            let bounds = clip_normalize(&mut stack.data, &stack.validity, m.composite.percentiles)?;
            for (c, b) in bounds.iter().enumerate() {
                if b.is_constant() {
                    ctx.warn(format!(
                        "{tile}: channel {c} is constant and normalises to 0"
                    ));
                }
            }
            let grids = tile_grids(&tile, m.year, stack.data.view(), &stack.validity, per_side)?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            grids.par_iter().try_for_each(|g| {
                let p = dir.join(g.grid.file_name(ArtifactKind::Image));
                write_npy(&p, &g.data)?;
                ctx.wrote(p);
                Ok::<_, Error>(())
            })?;
            let (h, w, c) = shape;
            tiles.push(TileIndex {
                tile: tile.clone(),
                height: h,
                width: w,
                channels: c,
                grid_height: h / per_side,
                grid_width: w / per_side,
                scenes: n_scenes,
                validity: stack.validity.clone(),
                bounds,
                grids: grids.into_iter().map(|g| g.grid).collect(),
            });
        }
        if tiles.is_empty() {
            return Err(Error::Config("scene manifest lists no scenes".into()));
        }
        let p = dir.join(COMPOSITE_INDEX);
        write_json(&p, &CompositeIndex { tiles })?;
        ctx.wrote(p);
        Ok(())
    }

    fn composite_index(&self) -> Result<CompositeIndex> {
        read_json(&self.root.join(IMAGES_DIR).join(COMPOSITE_INDEX))
    }

    fn prep_labels(&self, ctx: &StageCtx) -> Result<()> {
        let m = &self.manifest;
        let images = self.composite_index()?;
        let inclusion = InclusionThresholds::default();
        for c in self.catalog.classes() {
            let stats = RawClassStats {
                raw_code: c.code,
                name: c.name.clone(),
                region_pixel_count: c.region_pixel_count,
                validation_pixel_count: c.validation_pixel_count,
                is_crop: c.is_crop,
            };
            if c.region_pixel_count > 0 && !inclusion.includes(&stats) {
                ctx.warn(format!(
                    "catalog class {} is below the inclusion thresholds",
                    c.name
                ));
            }
        }
        let dir = self.root.join(LABELS_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut all_grids = Vec::new();
        let mut merge = MergeReport::default();
        for (tile, path) in &m.label_rasters {
            let raw: Array2<u8> = read_npy(&m.resolve(path))?;
            let fine = resample_labels(&raw, m.labels.resample_factor)?;
            match images.tiles.iter().find(|t| &t.tile == tile) {
                Some(t) if fine.dim() != (t.height, t.width) => {
                    return Err(Error::Shape(format!(
                        "{tile}: labels resample to {:?}, imagery is {}×{}",
                        fine.dim(),
                        t.height,
                        t.width
                    )));
                }
                Some(_) => {}
                None => ctx.warn(format!("{tile}: labels without imagery")),
            }
            let grids = split_labels(tile, m.year, fine.view(), m.composite.grids_per_side)?;
            let reports = grids
                .par_iter()
                .map(|(id, codes)| {
                    let raw = LabelGrid::new(id.to_string(), codes.clone(), LabelStage::Raw);
                    let prepared =
                        preprocess_labels(&raw, &self.catalog, m.labels.max_component_size)?;
                    for (kind, grid) in [
                        (ArtifactKind::CombinedCdlLabel, &prepared.combined),
                        (ArtifactKind::PreprocessedCdlLabel, &prepared.eroded),
                    ] {
                        let p = dir.join(id.file_name(kind));
                        write_npy(&p, &grid.codes)?;
                        ctx.wrote(p);
                    }
                    Ok(prepared.report)
                })
                .collect::<Result<Vec<_>>>()?;
            for r in &reports {
                merge.absorb(r);
            }
            all_grids.extend(grids.into_iter().map(|(id, _)| id));
        }
        for (code, n) in &merge.absent_codes {
            ctx.warn(format!(
                "raw code {code} is not in the catalog; {n} pixels set to unknown"
            ));
        }
        all_grids.sort();
        let p = dir.join(LABEL_INDEX);
        write_json(
            &p,
            &LabelIndex {
                grids: all_grids,
                absent_codes: merge,
            },
        )?;
        ctx.wrote(p);
        Ok(())
    }

    fn label_index(&self) -> Result<LabelIndex> {
        read_json(&self.root.join(LABELS_DIR).join(LABEL_INDEX))
    }

    fn read_labels(&self, dir: &str, grid: &GridId, kind: ArtifactKind) -> Result<Array2<u8>> {
        read_npy(&self.artifact(dir, grid, kind))
    }

    fn read_image(&self, grid: &GridId) -> Result<Array4<f32>> {
        read_npy(&self.artifact(IMAGES_DIR, grid, ArtifactKind::Image))
    }

    fn curate(&self, ctx: &StageCtx) -> Result<()> {
        let thresholds = self.manifest.curation();
        let records = self
            .label_index()?
            .grids
            .par_iter()
            .map(|g| {
                let codes = self.read_labels(LABELS_DIR, g, ArtifactKind::PreprocessedCdlLabel)?;
                let stats = GridLabelStats::compute(g.clone(), &codes, &self.catalog)?;
                Ok(CurationRecord {
                    known_fraction: stats.known_fraction(),
                    crop_fraction: stats.crop_fraction(),
                    accepted: thresholds.accepts(&stats),
                    stats,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let accepted = records.iter().filter(|r| r.accepted).count();
        log::info!("curate: {accepted} of {} grids accepted", records.len());
        if accepted == 0 {
            ctx.warn("no grid passed curation".into());
        }
        let p = self.root.join(CURATION_DIR).join(GRID_STATS);
        write_json(&p, &records)?;
        ctx.wrote(p);
        Ok(())
    }

    fn split(&self, ctx: &StageCtx) -> Result<()> {
        let records: Vec<CurationRecord> =
            read_json(&self.root.join(CURATION_DIR).join(GRID_STATS))?;
        let accepted: Vec<GridLabelStats> = records
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.stats.clone())
            .collect();
        let assignment = split_grids(&accepted, self.manifest.split, self.seed)?;
        for w in &assignment.warnings {
            ctx.warn(w.clone());
        }
        let dir = self.root.join(SPLIT_DIR);
        let csv_path = dir.join(SPLIT_CSV);
        let mut rows: Vec<(GridId, Split)> = records
            .iter()
            .map(|r| {
                let s = assignment
                    .assignments
                    .get(&r.stats.grid)
                    .copied()
                    .unwrap_or(Split::Excluded);
                (r.stats.grid.clone(), s)
            })
            .collect();
        rows.sort();
        crate::npy::write_atomic(&csv_path, |out| {
            let mut w = csv::Writer::from_writer(out);
            let fail = |e: csv::Error| Error::format(&csv_path, e);
            w.write_record(["grid_id", "split"]).map_err(fail)?;
            for (g, s) in &rows {
                w.write_record([g.to_string(), s.to_string()])
                    .map_err(fail)?;
            }
            w.flush().map_err(|e| Error::io(&csv_path, e))
        })?;
        ctx.wrote(csv_path);
        let p = dir.join(SPLIT_JSON);
        write_json(&p, &assignment)?;
        ctx.wrote(p);
        log::info!(
            "split: {} train / {} val / {} test",
            assignment.count(Split::Train),
            assignment.count(Split::Val),
            assignment.count(Split::Test)
        );
        Ok(())
    }

    /// Grid → split from the split manifest.
    pub fn split_map(&self) -> Result<BTreeMap<GridId, Split>> {
        let path = self.root.join(SPLIT_DIR).join(SPLIT_CSV);
        let mut rdr = csv::Reader::from_path(&path).map_err(|e| Error::format(&path, e))?;
        let mut out = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::format(&path, e))?;
            let grid: GridId = rec
                .get(0)
                .unwrap_or_default()
                .parse()
                .map_err(|e: Error| Error::format(&path, e))?;
            let split: Split = rec.get(1).unwrap_or_default().parse()?;
            out.insert(grid, split);
        }
        Ok(out)
    }

    /// Labelled grids inside `scope`, in id order.
    fn scoped_grids(&self, scope: GridScope) -> Result<Vec<GridId>> {
        let splits = self.split_map()?;
        Ok(self
            .label_index()?
            .grids
            .into_iter()
            .filter(|g| scope.includes(splits.get(g).copied().unwrap_or(Split::Excluded)))
            .collect())
    }

    fn ndvi_of(&self, grid: &GridId) -> Result<Array3<f32>> {
        compute_ndvi(self.read_image(grid)?.view(), self.manifest.ndvi)
    }

    fn train_mock(&self, ctx: &StageCtx) -> Result<NearestCentroid> {
        let train = self.scoped_grids(GridScope::Train)?;
        if train.is_empty() {
            return Err(Error::Config(
                "no training grids for the stand-in segmenter".into(),
            ));
        }
        let windows = self.manifest.composite.windows;
        let k = self.catalog.num_classes();
        let acc = train
            .par_iter()
            .map(|g| {
                let ndvi = self.ndvi_of(g)?;
                let labels = self.read_labels(LABELS_DIR, g, ArtifactKind::PreprocessedCdlLabel)?;
                let mut acc = CentroidAccumulator::new(k, windows);
                acc.add(ndvi.view(), &labels)?;
                Ok(acc)
            })
            .try_reduce(
                || CentroidAccumulator::new(k, windows),
                |a, b| Ok(a.merge(b)),
            )?;
        let model = acc.finish(self.manifest.mock.temperature)?;
        if !model.missing.is_empty() {
            let names: Vec<&str> = model
                .missing
                .iter()
                .map(|&c| self.catalog.name(c))
                .collect();
            ctx.warn(format!(
                "{} classes without training pixels, excluded from the stand-in segmenter: {}",
                names.len(),
                names.join(", ")
            ));
        }
        let p = self.root.join(PROBS_DIR).join(MOCK_MODEL);
        write_json(&p, &model)?;
        ctx.wrote(p);
        Ok(model)
    }

    fn refine(&self, ctx: &StageCtx) -> Result<()> {
        let m = &self.manifest;
        let images = self.composite_index()?;
        let params = m.grow_params();
        let k = self.catalog.num_classes();
        let model = match m.segmenter {
            SegmenterMode::Mock => Some(self.train_mock(ctx)?),
            SegmenterMode::ExternalProbs => None,
        };
        let probs_dir = self.root.join(PROBS_DIR);
        let refined_dir = self.root.join(REFINED_DIR);
        for d in [&probs_dir, &refined_dir] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let grids: Vec<(&TileIndex, &GridId)> = images.grids().collect();
        let mut summary = grids
            .par_iter()
            .map(|(tile, g)| {
                let stored = match &model {
                    Some(model) => {
                        let p = model.predict(self.ndvi_of(g)?.view())?;
                        let path = probs_dir.join(g.file_name(ArtifactKind::Probs));
                        write_npy(&path, &p)?;
                        ctx.wrote(path);
                        p
                    }
                    None => {
                        let dir = m.resolve(m.probs_dir.as_deref().expect("validated"));
                        read_npy::<Array3<f32>>(&dir.join(g.file_name(ArtifactKind::Probs)))?
                    }
                };
                let dims = stored.dim();
                if dims != (tile.grid_height, tile.grid_width, k) {
                    return Err(Error::Shape(format!(
                        "{g}: probabilities {dims:?}, expected ({}, {}, {k})",
                        tile.grid_height, tile.grid_width
                    )));
                }
                let grid = ProbabilityGrid::from_stored(g.to_string(), stored)?;
                let argmax = argmax_labels(&grid);
                let refined = refine(&grid, params)?;
                for (kind, codes) in [
                    (ArtifactKind::ArgmaxLabel, &argmax),
                    (ArtifactKind::PreprocessedStattLabel, &refined),
                ] {
                    let path = refined_dir.join(g.file_name(kind));
                    write_npy(&path, codes)?;
                    ctx.wrote(path);
                }
                let n = refined.len();
                let unknown = refined.iter().filter(|&&c| c == UNKNOWN).count();
                let changed = refined.iter().zip(&argmax).filter(|(a, b)| a != b).count();
                Ok(RefinedGrid {
                    grid: (*g).clone(),
                    unknown_fraction: fraction(unknown, n),
                    changed_from_argmax: fraction(changed, n),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        summary.sort_by(|a, b| a.grid.cmp(&b.grid));
        let p = refined_dir.join(REFINE_INDEX);
        write_json(
            &p,
            &RefineIndex {
                segmenter: m.segmenter,
                grids: summary,
            },
        )?;
        ctx.wrote(p);
        Ok(())
    }

    fn evaluate(&self, ctx: &StageCtx) -> Result<()> {
        let m = &self.manifest;
        let scope = m.evaluation.scope;
        let grids = self.scoped_grids(scope)?;
        if grids.is_empty() {
            return Err(Error::Config(format!(
                "no grids in evaluation scope {scope:?}"
            )));
        }
        let names = self.catalog.names();
        let k = self.catalog.num_classes();
        let settings = m.eval_settings();
        let mut parts = grids
            .par_iter()
            .map(|g| {
                let reference =
                    self.read_labels(LABELS_DIR, g, ArtifactKind::PreprocessedCdlLabel)?;
                let candidate =
                    self.read_labels(REFINED_DIR, g, ArtifactKind::PreprocessedStattLabel)?;
                let ndvi = self.ndvi_of(g)?;
                let matrix = ConfusionMatrix::from_labels(names.clone(), &reference, &candidate)?;
                let analysis = analyze_grid(
                    &g.to_string(),
                    ndvi.view(),
                    &reference,
                    &candidate,
                    k,
                    settings.min_support,
                )?;
                Ok((g.clone(), matrix, analysis))
            })
            .collect::<Result<Vec<_>>>()?;
        parts.sort_by(|a, b| a.0.cmp(&b.0));
        let mut matrix = ConfusionMatrix::zeros(names);
        let mut analyses = Vec::with_capacity(parts.len());
        for (_, m, a) in parts {
            matrix.merge(&m)?;
            analyses.push(a);
        }
        if matrix.total() == 0 {
            return Err(Error::Empty(
                "pixels known in both reference and refined labels",
            ));
        }
        let report: EvaluationReport = build_report(&matrix, &analyses, &self.catalog, &settings)?;
        for w in &report.warnings {
            ctx.warn(w.clone());
        }
        let p = self.root.join(EVAL_DIR).join(EVALUATION_JSON);
        write_json(&p, &report)?;
        ctx.wrote(p);
        Ok(())
    }

    fn report(&self, ctx: &StageCtx) -> Result<()> {
        let report: EvaluationReport = read_json(&self.root.join(EVAL_DIR).join(EVALUATION_JSON))?;
        for p in crate::eval::report::write_report(&report, &self.root.join(REPORTS_DIR))? {
            ctx.wrote(p);
        }
        Ok(())
    }

    fn chips(&self, ctx: &StageCtx) -> Result<()> {
        let c = &self.manifest.chips;
        let mut grids = self.scoped_grids(c.scope)?;
        if c.max_grids > 0 {
            grids.truncate(c.max_grids);
        }
        let dir = self.root.join(CHIPS_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let refined: BTreeSet<GridId> = self
            .composite_index()?
            .grids()
            .map(|(_, g)| g.clone())
            .collect();
        grids
            .par_iter()
            .filter(|g| refined.contains(g))
            .try_for_each(|g| {
                let reference =
                    self.read_labels(LABELS_DIR, g, ArtifactKind::PreprocessedCdlLabel)?;
                let candidate =
                    self.read_labels(REFINED_DIR, g, ArtifactKind::PreprocessedStattLabel)?;
                let image = self.read_image(g)?;
                let (h, w) = reference.dim();
                let rgb = composite_rgb(image.view(), c.window, c.rgb)?;
                for (suffix, bytes) in [
                    ("reference", label_rgb(&reference)),
                    ("refined", label_rgb(&candidate)),
                    ("composite", rgb),
                ] {
                    let p = dir.join(format!("{g}_{suffix}.png"));
                    write_png(&p, w, h, &bytes)?;
                    ctx.wrote(p);
                }
                Ok::<_, Error>(())
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("nope".parse::<Stage>().is_err());
    }

    #[test]
    fn upstream_precedes_stage() {
        for s in Stage::ALL {
            for &u in s.upstream() {
                assert!(u < s, "{u} must run before {s}");
            }
        }
        assert!(!Stage::Evaluate.upstream().contains(&Stage::Report));
    }
}
