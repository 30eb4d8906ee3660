//! Digest-keyed evaluation cache with an append-only JSON-lines journal.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use super::EvalResult;
use crate::genome::GenomeDigest;

#[derive(Debug, Default)]
pub struct EvalCache {
    entries: RwLock<HashMap<GenomeDigest, EvalResult>>,
    journal: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl EvalCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a journal and replays it. A torn final line from
    /// an interrupted write is skipped.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<EvalResult>(&line) {
                    Ok(r) => {
                        entries.insert(r.digest, r);
                    }
                    Err(err) => log::warn!("skipping unreadable cache line in {}: {err}", path.display()),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        let raw = std::fs::read(path)?;
        if raw.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n")?;
        }
        Ok(EvalCache { entries: RwLock::new(entries), journal: Some(Mutex::new(file)), path: Some(path.to_path_buf()) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, digest: &GenomeDigest) -> Option<EvalResult> {
        self.entries.read().expect("cache lock poisoned").get(digest).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores a result, appending it to the journal first.
    pub fn insert(&self, result: EvalResult) -> io::Result<()> {
        if let Some(journal) = &self.journal {
            let mut line = serde_json::to_string(&result).map_err(io::Error::other)?;
            line.push('\n');
            let mut file = journal.lock().expect("journal lock poisoned");
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        self.entries.write().expect("cache lock poisoned").insert(result.digest, result);
        Ok(())
    }
}
