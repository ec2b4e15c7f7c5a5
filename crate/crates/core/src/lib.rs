//! Refinement of coarse, noisy crop-label rasters into 10 m labels and
//! evaluation of label quality against a reference product.
//!
//! The crate is organised along the processing chain:
//!
//! - [`composite`], [`normalize`], [`tiling`], [`scene`]: cloud-filtered
//!   bi-weekly composites from per-scene rasters, per-channel percentile
//!   normalisation and tiling into fixed-size grids.
//! - [`catalog`], [`labels`], [`morphology`], [`curation`], [`split`]:
//!   reference-label preparation (resampling, class merging, boundary
//!   erosion, small-component removal), grid acceptance and the
//!   count-based train/val/test split.
//! - [`region_grow`]: confident-anchor region growing over per-pixel class
//!   probabilities.
//! - [`eval`]: confusion matrices, precision/recall/F1, NDVI signatures,
//!   NMSE score curves and the derived statistics.
//! - [`pipeline`]: manifest-driven stage runner with a content-hash ledger
//!   and a nearest-centroid stand-in segmenter.
//! - [`synth`]: synthetic scenes and labels for desk-scale runs.

pub mod catalog;
pub mod composite;
pub mod curation;
pub mod error;
pub mod eval;
pub mod grid;
pub mod labels;
pub mod morphology;
pub mod normalize;
pub mod npy;
pub mod pipeline;
pub mod region_grow;
pub mod scene;
pub mod split;
pub mod synth;
pub mod tiling;

pub use error::{Error, Result};
pub use grid::{ArtifactKind, GridId};

/// Reserved label code for pixels without a trusted class.
pub const UNKNOWN: u8 = 0;
