//! The animo catalog: which motions exist and which energy band each one
//! expresses. Loaded from one JSON record per line.

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EnergyBand;

const BUILTIN_CATALOG: &str = include_str!("../../data/catalog.jsonl");

pub const CATALOG_SIZE: usize = 18;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnimoId(String);

impl AnimoId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AnimoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AnimoId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for AnimoId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// Position of an animo on the valence/arousal circumplex. Metadata only;
/// selection never looks at it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryTag {
    QuadrantPvha,
    QuadrantPvla,
    QuadrantNvha,
    QuadrantNvla,
    EnergyAmbiguous,
    Neutral,
}

impl CategoryTag {
    fn expected_count(self) -> usize {
        match self {
            CategoryTag::QuadrantPvha
            | CategoryTag::QuadrantPvla
            | CategoryTag::QuadrantNvha
            | CategoryTag::QuadrantNvla => 3,
            CategoryTag::EnergyAmbiguous => 2,
            CategoryTag::Neutral => 4,
        }
    }

    const ALL: [CategoryTag; 6] = [
        CategoryTag::QuadrantPvha,
        CategoryTag::QuadrantPvla,
        CategoryTag::QuadrantNvha,
        CategoryTag::QuadrantNvla,
        CategoryTag::EnergyAmbiguous,
        CategoryTag::Neutral,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnimoSpec {
    #[serde(rename = "id")]
    pub animo_id: AnimoId,
    pub motion_name: String,
    pub energy_band: EnergyBand,
    pub category_tag: CategoryTag,
}

#[derive(Debug, Error, PartialEq)]
pub enum CatalogError {
    #[error("catalog line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("catalog io: {0}")]
    Io(String),
    #[error("catalog has {0} entries, expected 18")]
    WrongSize(usize),
    #[error("catalog has {found} {tag:?} entries, expected {expected}")]
    WrongCategoryCount {
        tag: CategoryTag,
        found: usize,
        expected: usize,
    },
    #[error("no catalog entry with energy band {0}")]
    MissingBand(EnergyBand),
    #[error("duplicate animo id {0}")]
    DuplicateId(AnimoId),
    #[error("unknown animo id {0}")]
    UnknownAnimo(AnimoId),
    #[error("animo {animo_id} is {catalog} energy in the catalog but the state says {state}")]
    BandMismatch {
        animo_id: AnimoId,
        catalog: EnergyBand,
        state: EnergyBand,
    },
}

/// A validated set of animos.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    entries: Vec<AnimoSpec>,
}

impl Catalog {
    /// The catalog shipped in `data/catalog.jsonl`.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_CATALOG.as_bytes()).expect("builtin catalog is valid")
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self, CatalogError> {
        let mut entries = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| CatalogError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let spec: AnimoSpec = serde_json::from_str(&line).map_err(|e| CatalogError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            entries.push(spec);
        }
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<AnimoSpec>) -> Result<Self, CatalogError> {
        if entries.len() != CATALOG_SIZE {
            return Err(CatalogError::WrongSize(entries.len()));
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(&e.animo_id) {
                return Err(CatalogError::DuplicateId(e.animo_id.clone()));
            }
        }
        for tag in CategoryTag::ALL {
            let found = entries.iter().filter(|e| e.category_tag == tag).count();
            if found != tag.expected_count() {
                return Err(CatalogError::WrongCategoryCount {
                    tag,
                    found,
                    expected: tag.expected_count(),
                });
            }
        }
        for band in EnergyBand::ALL {
            if !entries.iter().any(|e| e.energy_band == band) {
                return Err(CatalogError::MissingBand(band));
            }
        }
        Ok(Self { entries })
    }

    /// Skips validation. Only for exercising configuration errors.
    #[doc(hidden)]
    pub fn from_entries_unchecked(entries: Vec<AnimoSpec>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[AnimoSpec] {
        &self.entries
    }

    pub fn get(&self, id: &AnimoId) -> Option<&AnimoSpec> {
        self.entries.iter().find(|e| &e.animo_id == id)
    }

    /// Entries of one band, in file order.
    pub fn in_band(&self, band: EnergyBand) -> Vec<&AnimoSpec> {
        self.entries.iter().filter(|e| e.energy_band == band).collect()
    }
}
