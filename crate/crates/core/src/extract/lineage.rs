//! Lineage document: which sources, configuration and code produced each
//! extracted cohort.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Digest identifying the code that produced an extraction.
pub fn code_digest() -> String {
    sha256_hex(concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of any serializable spec, taken over its JSON form.
pub fn config_digest<T: Serialize>(spec: &T) -> String {
    sha256_hex(&serde_json::to_vec(spec).expect("spec serializes"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub table: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub name: String,
    /// Directory holding `subjects.csv` and `events.csv`, relative to the
    /// lineage document.
    pub path: String,
    /// Event category; several categories are comma separated.
    pub category: String,
    pub sources: Vec<SourceRef>,
    /// Number of events.
    pub count: u64,
    pub subjects: u64,
    pub config_digest: String,
    pub code_digest: String,
    pub operations: Vec<String>,
}

impl LineageEntry {
    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.category.split(',').filter(|c| !c.is_empty())
    }
}

/// A stage of the extraction attrition: subjects left and why the others
/// were dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttritionStage {
    pub name: String,
    pub subjects: u64,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Lineage {
    pub code_digest: String,
    #[serde(default)]
    pub study_start: String,
    #[serde(default)]
    pub study_end: String,
    #[serde(default)]
    pub cohorts: Vec<LineageEntry>,
    #[serde(default)]
    pub attrition: Vec<AttritionStage>,
}

impl Lineage {
    pub fn new(study_start: String, study_end: String) -> Self {
        Self {
            code_digest: code_digest(),
            study_start,
            study_end,
            cohorts: Vec::new(),
            attrition: Vec::new(),
        }
    }

    /// Adds an entry, rejecting repeated cohort names or categories.
    pub fn push(&mut self, entry: LineageEntry) -> Result<()> {
        if self.cohorts.iter().any(|c| c.name == entry.name) {
            return Err(Error::Duplicate(format!("cohort `{}` in lineage", entry.name)));
        }
        let taken: HashSet<&str> = self.cohorts.iter().flat_map(|c| c.categories()).collect();
        if let Some(c) = entry.categories().find(|c| taken.contains(c)) {
            return Err(Error::Duplicate(format!("category `{c}` in lineage")));
        }
        self.cohorts.push(entry);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut check = Lineage::default();
        for c in &self.cohorts {
            check.push(c.clone())?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("lineage serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let l: Lineage = serde_json::from_str(text)?;
        l.validate()?;
        Ok(l)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
