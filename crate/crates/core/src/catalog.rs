//! Class code table: internal dense codes, raw-product merge rules and
//! crop flags.
//!
//! Internal code 0 is always the unknown class; classes are numbered
//! `1..=K`. Each class lists the raw product codes merged into it. Raw
//! codes listed under `unknown_source_codes` are deliberately mapped to
//! unknown (e.g. double crops); raw codes absent from the table are also
//! mapped to unknown but reported.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::UNKNOWN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub code: u8,
    pub name: String,
    #[serde(default)]
    pub source_codes: Vec<u8>,
    #[serde(default)]
    pub is_crop: bool,
    #[serde(default)]
    pub region_pixel_count: u64,
    #[serde(default)]
    pub validation_pixel_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CatalogFile {
    #[serde(default)]
    unknown_source_codes: Vec<u8>,
    #[serde(rename = "class")]
    classes: Vec<ClassEntry>,
}

/// What a raw product code turns into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawMapping {
    Class(u8),
    /// Listed as deliberately unknown.
    Unknown,
    /// Not mentioned by the catalog.
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CatalogFile", into = "CatalogFile")]
pub struct ClassCatalog {
    classes: Vec<ClassEntry>,
    unknown_source_codes: Vec<u8>,
    /// Internal code per raw code; `None` when the raw code is absent.
    lookup: Vec<Option<u8>>,
}

const CALIFORNIA: &str = include_str!("../assets/california_catalog.toml");

impl ClassCatalog {
    pub fn new(classes: Vec<ClassEntry>, unknown_source_codes: Vec<u8>) -> Result<Self> {
        CatalogFile {
            unknown_source_codes,
            classes,
        }
        .try_into()
    }

    /// The 21 crop + 7 other classes of the Central Valley study region,
    /// with their Cropland Data Layer source codes.
    pub fn california() -> Self {
        toml::from_str(CALIFORNIA).expect("bundled catalog is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::format(path, e)),
            _ => toml::from_str(&text).map_err(|e| Error::format(path, e)),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("catalog serialises")
    }

    /// Number of classes `K`, excluding unknown.
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn entry(&self, code: u8) -> Option<&ClassEntry> {
        code.checked_sub(1)
            .and_then(|i| self.classes.get(i as usize))
    }

    pub fn name(&self, code: u8) -> &str {
        if code == UNKNOWN {
            return "Unknown";
        }
        self.entry(code).map_or("?", |e| e.name.as_str())
    }

    /// Class names in code order `1..=K`.
    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn is_crop(&self, code: u8) -> bool {
        self.entry(code).is_some_and(|e| e.is_crop)
    }

    /// `is_crop` indexed by code, unknown included at index 0.
    pub fn crop_table(&self) -> Vec<bool> {
        std::iter::once(false)
            .chain(self.classes.iter().map(|c| c.is_crop))
            .collect()
    }

    pub fn code_of(&self, name: &str) -> Option<u8> {
        self.classes
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
            .map(|c| c.code)
    }

    pub fn map_raw(&self, raw: u8) -> RawMapping {
        match self.lookup[raw as usize] {
            Some(UNKNOWN) => RawMapping::Unknown,
            Some(code) => RawMapping::Class(code),
            None => RawMapping::Absent,
        }
    }
}

impl TryFrom<CatalogFile> for ClassCatalog {
    type Error = Error;

    fn try_from(file: CatalogFile) -> Result<Self> {
        let mut lookup: Vec<Option<u8>> = vec![None; 256];
        let mut claim = |raw: u8, code: u8, owner: &str| {
            if let Some(prev) = lookup[raw as usize] {
                return Err(Error::Config(format!(
                    "raw code {raw} claimed by both code {prev} and {owner}"
                )));
            }
            lookup[raw as usize] = Some(code);
            Ok(())
        };
        for &raw in &file.unknown_source_codes {
            claim(raw, UNKNOWN, "unknown")?;
        }
        for (i, entry) in file.classes.iter().enumerate() {
            if entry.code as usize != i + 1 {
                return Err(Error::Config(format!(
                    "class {:?} has code {}, expected dense code {}",
                    entry.name,
                    entry.code,
                    i + 1
                )));
            }
            if entry.name.trim().is_empty() {
                return Err(Error::Config(format!("class {} has no name", entry.code)));
            }
            if file.classes[..i].iter().any(|e| e.name == entry.name) {
                return Err(Error::Config(format!(
                    "duplicate class name {:?}",
                    entry.name
                )));
            }
            for &raw in &entry.source_codes {
                claim(raw, entry.code, &entry.name)?;
            }
        }
        if file.classes.len() > 254 {
            return Err(Error::Config(
                "at most 254 classes fit in 8-bit labels".into(),
            ));
        }
        Ok(ClassCatalog {
            classes: file.classes,
            unknown_source_codes: file.unknown_source_codes,
            lookup,
        })
    }
}

impl From<ClassCatalog> for CatalogFile {
    fn from(c: ClassCatalog) -> Self {
        CatalogFile {
            unknown_source_codes: c.unknown_source_codes,
            classes: c.classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(code: u8, name: &str, sources: &[u8], crop: bool) -> ClassEntry {
        ClassEntry {
            code,
            name: name.into(),
            source_codes: sources.to_vec(),
            is_crop: crop,
            region_pixel_count: 0,
            validation_pixel_count: 0,
        }
    }

    #[test]
    fn california_has_21_crops_and_7_others() {
        let cat = ClassCatalog::california();
        assert_eq!(cat.num_classes(), 28);
        assert_eq!(cat.classes().iter().filter(|c| c.is_crop).count(), 21);
        let forests = cat.code_of("Forests Combined").unwrap();
        assert_eq!(cat.map_raw(141), RawMapping::Class(forests));
        assert_eq!(cat.map_raw(142), RawMapping::Class(forests));
        assert_eq!(cat.map_raw(143), RawMapping::Class(forests));
        let grass = cat.code_of("Grass Combined").unwrap();
        for raw in [176, 152, 58] {
            assert_eq!(cat.map_raw(raw), RawMapping::Class(grass));
        }
        assert_eq!(cat.map_raw(26), RawMapping::Unknown);
        assert_eq!(cat.map_raw(250), RawMapping::Absent);
        assert_eq!(cat.name(0), "Unknown");
        assert_eq!(cat.name(3), "Rice");
    }

    #[test]
    fn toml_round_trip() {
        let cat = ClassCatalog::california();
        let back: ClassCatalog = toml::from_str(&cat.to_toml()).unwrap();
        assert_eq!(back, cat);
    }

    #[test]
    fn rejects_overlapping_sources() {
        let err = ClassCatalog::new(
            vec![entry(1, "A", &[5], true), entry(2, "B", &[5], false)],
            vec![],
        );
        assert!(err.is_err());
        let err = ClassCatalog::new(vec![entry(1, "A", &[5], true)], vec![5]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_sparse_codes() {
        assert!(ClassCatalog::new(vec![entry(2, "A", &[1], true)], vec![]).is_err());
        assert!(ClassCatalog::new(vec![entry(0, "A", &[1], true)], vec![]).is_err());
    }
}
