//! Grid identifiers and the artifact naming convention.
//!
//! A tile is split into `n × n` grids; grid `(row, col)` of tile `T11SKA`
//! in 2018 is written as `T11SKA_2018_5_6_<KIND>.npy` with 0-based indices.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridId {
    pub tile: String,
    pub year: i32,
    pub row: usize,
    pub col: usize,
}

/// The per-grid artifacts produced by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Image,
    CombinedCdlLabel,
    PreprocessedCdlLabel,
    Probs,
    ArgmaxLabel,
    PreprocessedStattLabel,
}

impl ArtifactKind {
    pub fn suffix(self) -> &'static str {
        match self {
            ArtifactKind::Image => "IMAGE",
            ArtifactKind::CombinedCdlLabel => "COMBINED_CDL_LABEL",
            ArtifactKind::PreprocessedCdlLabel => "PREPROCESSED_CDL_LABEL",
            ArtifactKind::Probs => "PROBS",
            ArtifactKind::ArgmaxLabel => "ARGMAX_LABEL",
            ArtifactKind::PreprocessedStattLabel => "PREPROCESSED_STATT_LABEL",
        }
    }
}

impl GridId {
    pub fn new(tile: impl Into<String>, year: i32, row: usize, col: usize) -> Self {
        GridId {
            tile: tile.into(),
            year,
            row,
            col,
        }
    }

    /// `TILEID_YEAR_ROW_COL_<KIND>.npy`
    pub fn file_name(&self, kind: ArtifactKind) -> String {
        format!("{}_{}.npy", self, kind.suffix())
    }
}

impl fmt::Display for GridId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}_{}_{}", self.tile, self.year, self.row, self.col)
    }
}

impl FromStr for GridId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed grid id {s:?}"));
        // Tile ids never contain '_', so split from the right.
        let mut parts = s.rsplitn(4, '_');
        let col = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let row = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let year = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let tile = parts.next().filter(|t| !t.is_empty()).ok_or_else(bad)?;
        Ok(GridId::new(tile, year, row, col))
    }
}

impl TryFrom<String> for GridId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GridId> for String {
    fn from(id: GridId) -> String {
        id.to_string()
    }
}

/// Grid ids order lexicographically by their string form.
impl Ord for GridId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.to_string().cmp(&other.to_string())
    }
}

impl PartialOrd for GridId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
