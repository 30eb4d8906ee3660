use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EngineError, RunConfig};
use crate::control::ControlTables;
use crate::genome::GenomeDigest;
use crate::individual::Individual;
use crate::rng::RngState;

pub const FORMAT_VERSION: u32 = 1;

/// Fitness summary of one completed generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    /// 1-based row number; equals the generation counter after the step.
    pub generation: u32,
    pub phase: u8,
    pub best: f64,
    pub mean: f64,
    pub worst: f64,
    pub best_digest: GenomeDigest,
    /// Individuals that received a fitness during this step.
    pub evaluated: usize,
    pub failures: usize,
}

/// Complete engine state after a generation boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub format_version: u32,
    pub generation: u32,
    pub phase: u8,
    pub paused: bool,
    pub stopped: bool,
    /// Generation counter at which the rescheduling hand-pick happened.
    pub phase2_start: Option<u32>,
    pub population: Vec<Individual>,
    pub tables: ControlTables,
    pub rng: RngState,
    pub history: Vec<HistoryRow>,
    /// All-time best individuals, ranked, unique by digest.
    pub hall_of_fame: Vec<Individual>,
    pub next_request_id: u64,
    pub config: RunConfig,
}

impl RunCheckpoint {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("checkpoints serialize");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| EngineError::CorruptCheckpoint(e.to_string()))?;
        let version = value.get("format_version").and_then(|v| v.as_u64());
        match version {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => return Err(EngineError::FormatVersionMismatch { found: v, expected: FORMAT_VERSION }),
            None => return Err(EngineError::CorruptCheckpoint("missing format_version".into())),
        }
        serde_json::from_value(value).map_err(|e| EngineError::CorruptCheckpoint(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| EngineError::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Writes through a temp file and rename, so readers only ever see a
    /// complete document.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EngineError> {
        write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn best(&self) -> Option<&Individual> {
        self.hall_of_fame.first()
    }

    /// Looks a digest up in the population, then the hall of fame.
    pub fn find(&self, digest: &GenomeDigest) -> Option<&Individual> {
        self.population.iter().chain(&self.hall_of_fame).find(|i| &i.digest == digest)
    }

    /// Resolves full digests or unambiguous hex prefixes against
    /// [`find`](Self::find)'s search space.
    pub fn resolve(&self, id: &str) -> Result<GenomeDigest, EngineError> {
        if let Ok(d) = id.parse::<GenomeDigest>() {
            return self.find(&d).map(|i| i.digest).ok_or(EngineError::UnknownDigest(id.to_string()));
        }
        let id_lower = id.to_ascii_lowercase();
        let mut hits: Vec<GenomeDigest> = self
            .population
            .iter()
            .chain(&self.hall_of_fame)
            .map(|i| i.digest)
            .filter(|d| !id_lower.is_empty() && d.to_hex().starts_with(&id_lower))
            .collect();
        hits.sort();
        hits.dedup();
        match hits.as_slice() {
            [one] => Ok(*one),
            [] => Err(EngineError::UnknownDigest(id.to_string())),
            _ => Err(EngineError::AmbiguousDigest(id.to_string())),
        }
    }
}

pub fn checkpoint_name(generation: u32) -> String {
    format!("gen_{generation:04}.json")
}

/// Highest-numbered `gen_NNNN.json` in `run_dir`.
pub fn latest_checkpoint(run_dir: &Path) -> Result<Option<(u32, PathBuf)>, EngineError> {
    let entries = fs::read_dir(run_dir).map_err(|e| EngineError::RunDir(format!("{}: {e}", run_dir.display())))?;
    let mut best: Option<(u32, PathBuf)> = None;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let Some(n) = name.to_str().and_then(parse_checkpoint_name) else { continue };
        if best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, entry.path()));
        }
    }
    Ok(best)
}

pub fn parse_checkpoint_name(name: &str) -> Option<u32> {
    let digits = name.strip_prefix("gen_")?.strip_suffix(".json")?;
    if digits.len() < 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), EngineError> {
    let err = |e: std::io::Error| EngineError::CheckpointWrite(format!("{}: {e}", path.display()));
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(err)?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(err)?;
    drop(f);
    fs::rename(&tmp, path).map_err(err)
}
