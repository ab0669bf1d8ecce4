use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::summarization::SummaryConfig;

pub const MANIFEST_FILE: &str = "MANIFEST.json";
const MANIFEST_VERSION: u32 = 1;

/// How flushed runs are organized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LsmLayout {
    /// One run per level, level `i` holding up to `M·ratioⁱ` entries.
    Leveled { ratio: u32 },
    /// Every flush becomes its own partition and is never merged.
    Partitioned,
}

impl Default for LsmLayout {
    fn default() -> Self {
        LsmLayout::Leveled { ratio: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifestParams {
    pub summary: SummaryConfig,
    pub leaf_size: usize,
    pub fill: f64,
    pub materialized: bool,
    pub buffer_records: usize,
    pub layout: LsmLayout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunEntry {
    /// File name relative to the index directory.
    pub path: String,
    pub level: u32,
    pub min_ts: u64,
    pub max_ts: u64,
    pub count: u64,
    /// Header checksum of the run file.
    pub checksum: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub params: ManifestParams,
    pub next_seq: u64,
    /// Largest timestamp held by a run.
    pub max_ts: u64,
    pub raw_log: Option<String>,
    /// Newest first.
    pub runs: Vec<RunEntry>,
}

impl Manifest {
    pub fn new(params: ManifestParams, raw_log: Option<String>) -> Self {
        Self { version: MANIFEST_VERSION, params, next_seq: 0, max_ts: 0, raw_log, runs: Vec::new() }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, None, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    /// Writes to a temporary file and renames it over the old manifest.
    pub fn store(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Manifest(e.to_string()))?;
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, None, e))?;
        let file = std::fs::File::open(&tmp).map_err(|e| Error::io(&tmp, None, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, None, e))?;
        let dst = dir.join(MANIFEST_FILE);
        std::fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, None, e))
    }
}
