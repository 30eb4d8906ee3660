//! Run-steering commands and the sources that deliver them.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::genome::GenomeDigest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Intervention {
    Pause,
    Resume,
    Stop,
    HandPick {
        digests: Vec<GenomeDigest>,
        #[serde(default)]
        reschedule_channels: bool,
    },
}

/// Delivers interventions at generation boundaries.
pub trait InterventionSource {
    /// Interventions due at the boundary before `generation` is stepped.
    fn poll(&mut self, generation: u32) -> Vec<Intervention>;

    /// Blocks while the run is paused. `None` means nothing will ever
    /// arrive and the run should return.
    fn wait(&mut self, generation: u32) -> Option<Vec<Intervention>>;
}

/// A source that never intervenes.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoInterventions;

impl InterventionSource for NoInterventions {
    fn poll(&mut self, _generation: u32) -> Vec<Intervention> {
        Vec::new()
    }

    fn wait(&mut self, _generation: u32) -> Option<Vec<Intervention>> {
        None
    }
}

/// Fixed interventions keyed by the boundary generation they fire at.
#[derive(Debug, Default, Clone)]
pub struct Scripted {
    events: Vec<(u32, Intervention)>,
}

impl Scripted {
    pub fn new(events: impl IntoIterator<Item = (u32, Intervention)>) -> Self {
        Scripted { events: events.into_iter().collect() }
    }

    pub fn at(mut self, generation: u32, intervention: Intervention) -> Self {
        self.events.push((generation, intervention));
        self
    }

    pub fn remaining(&self) -> usize {
        self.events.len()
    }
}

impl InterventionSource for Scripted {
    fn poll(&mut self, generation: u32) -> Vec<Intervention> {
        let (due, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.events).into_iter().partition(|(g, _)| *g == generation);
        self.events = rest;
        due.into_iter().map(|(_, i)| i).collect()
    }

    fn wait(&mut self, _generation: u32) -> Option<Vec<Intervention>> {
        None
    }
}

pub const MAILBOX_FILE: &str = "control.mailbox";

/// The on-disk mailbox: a JSON array of pending interventions at
/// `<run>/control.mailbox`, consumed whole by renaming it away.
#[derive(Debug, Clone)]
pub struct Mailbox {
    path: PathBuf,
    poll_interval: Duration,
}

impl Mailbox {
    pub fn new(run_dir: impl AsRef<Path>) -> Self {
        Mailbox { path: run_dir.as_ref().join(MAILBOX_FILE), poll_interval: Duration::from_millis(200) }
    }

    pub fn with_poll_interval(mut self, every: Duration) -> Self {
        self.poll_interval = every;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Pending interventions without consuming them.
    pub fn peek(&self) -> io::Result<Vec<Intervention>> {
        match fs::read_to_string(&self.path) {
            Ok(text) => parse_mailbox(&text),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e),
        }
    }

    /// Appends `intervention`, replacing the file atomically.
    pub fn post(&self, intervention: Intervention) -> io::Result<()> {
        let mut pending = self.peek()?;
        pending.push(intervention);
        let tmp = self.path.with_extension("mailbox.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(&pending).map_err(io::Error::other)?)?;
        fs::rename(&tmp, &self.path)
    }

    /// Takes every pending intervention.
    pub fn take(&self) -> io::Result<Vec<Intervention>> {
        let taken = self.path.with_extension("mailbox.taken");
        match fs::rename(&self.path, &taken) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        }
        let text = fs::read_to_string(&taken)?;
        fs::remove_file(&taken)?;
        parse_mailbox(&text)
    }
}

fn parse_mailbox(text: &str) -> io::Result<Vec<Intervention>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let value: serde_json::Value = serde_json::from_str(text).map_err(io::Error::other)?;
    let list = if value.is_array() { value } else { serde_json::Value::Array(vec![value]) };
    serde_json::from_value(list).map_err(io::Error::other)
}

impl InterventionSource for Mailbox {
    fn poll(&mut self, _generation: u32) -> Vec<Intervention> {
        self.take().unwrap_or_else(|e| {
            log::warn!("discarding unreadable mailbox {}: {e}", self.path.display());
            Vec::new()
        })
    }

    fn wait(&mut self, generation: u32) -> Option<Vec<Intervention>> {
        loop {
            let got = self.poll(generation);
            if !got.is_empty() {
                return Some(got);
            }
            thread::sleep(self.poll_interval);
        }
    }
}
