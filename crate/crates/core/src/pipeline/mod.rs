//! Manifest-driven stage runner with a content-hash ledger, plus the
//! stand-in segmenter and chip export it uses.

pub mod chips;
pub mod ledger;
pub mod manifest;
pub mod mock;
pub mod stages;

pub use ledger::{LedgerEntry, RunLedger};
pub use manifest::{GridScope, PipelineManifest, SegmenterMode, OUTPUT_ROOT_ENV};
pub use mock::NearestCentroid;
pub use stages::{Pipeline, Stage};
