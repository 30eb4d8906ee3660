//! Fitness evaluation: backends, batching and the result cache.

mod cache;
pub mod plugin;
mod surrogate;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::EvalCache;
pub use plugin::{ExternalBackend, PluginClient, Reply};
pub use surrogate::{surrogate_accuracy, SurrogateBackend, SurrogateSpec};

use crate::compile::NetworkDescription;
use crate::genome::{Genome, GenomeDigest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Surrogate,
    External,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub digest: GenomeDigest,
    pub accuracy: f64,
    pub params: u64,
    pub source: Source,
    pub wall_time: f64,
    /// Why the evaluation failed; the accuracy is then 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl EvalResult {
    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalBudget {
    pub epochs: u32,
    /// Seconds.
    pub time_limit: f64,
    pub max_params: u64,
}

impl Default for EvalBudget {
    fn default() -> Self {
        EvalBudget { epochs: 5, time_limit: 600.0, max_params: 50_000_000 }
    }
}

/// One genome to score, with its compiled network and request id.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalJob {
    pub id: u64,
    pub genome: Genome,
    pub network: NetworkDescription,
}

/// A backend's answer for one job.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub accuracy: f64,
    pub params: u64,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("evaluation backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("evaluation of {0} timed out")]
    BackendTimeout(GenomeDigest),
    #[error("protocol error{}: {detail}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    Protocol { line: Option<usize>, detail: String },
    #[error("plugin reported an error: {0}")]
    Plugin(String),
    #[error("plugin process exited: {0}")]
    PluginExited(String),
    #[error("no reply before the deadline")]
    Timeout,
    #[error("cache journal write failed: {0}")]
    Cache(String),
}

/// Something that turns genomes into accuracies.
pub trait Backend: Send + Sync {
    fn source(&self) -> Source;

    fn score(&self, job: &EvalJob, budget: &EvalBudget) -> Result<Score, EvalError>;
}

/// Scores a batch, serving known digests from `cache`.
///
/// Each distinct uncached digest costs exactly one backend call; up to
/// `parallelism` calls run at once and results come back in input order.
/// Per-genome failures become accuracy-0 results carrying a `failure`
/// message and are not cached. Only an unavailable backend fails the whole
/// batch.
pub fn evaluate_batch(
    jobs: &[EvalJob],
    backend: &dyn Backend,
    budget: &EvalBudget,
    cache: &EvalCache,
    parallelism: usize,
) -> Result<Vec<EvalResult>, EvalError> {
    let digests: Vec<GenomeDigest> = jobs.iter().map(|j| j.genome.digest()).collect();

    // first job index per uncached digest, in input order
    let mut pending: Vec<usize> = Vec::new();
    let mut seen: HashMap<GenomeDigest, usize> = HashMap::new();
    for (i, d) in digests.iter().enumerate() {
        if cache.get(d).is_none() && !seen.contains_key(d) {
            seen.insert(*d, pending.len());
            pending.push(i);
        }
    }

    let fresh = run_pending(jobs, &pending, backend, budget, parallelism.max(1));
    if let Some(err) = fresh.iter().find_map(|r| match r {
        Err(e @ EvalError::BackendUnavailable(_)) => Some(e.clone()),
        _ => None,
    }) {
        return Err(err);
    }

    let fresh: Vec<EvalResult> = pending
        .iter()
        .zip(fresh)
        .map(|(&i, outcome)| {
            let (outcome, wall_time) = outcome.expect("unavailable backend handled above");
            match outcome {
                Ok(score) => EvalResult {
                    digest: digests[i],
                    accuracy: score.accuracy,
                    params: score.params,
                    source: backend.source(),
                    wall_time,
                    failure: None,
                },
                Err(err) => EvalResult {
                    digest: digests[i],
                    accuracy: 0.0,
                    params: jobs[i].network.param_count,
                    source: backend.source(),
                    wall_time,
                    failure: Some(err.to_string()),
                },
            }
        })
        .collect();

    for r in fresh.iter().filter(|r| !r.is_failure()) {
        cache.insert(r.clone()).map_err(|e| EvalError::Cache(e.to_string()))?;
    }

    let out = digests
        .iter()
        .enumerate()
        .map(|(i, d)| match seen.get(d) {
            Some(&slot) if pending[slot] == i => fresh[slot].clone(),
            Some(&slot) => fresh[slot].clone(),
            None => {
                let mut hit = cache.get(d).expect("cached before the batch");
                hit.source = Source::Cache;
                hit
            }
        })
        .collect();
    Ok(out)
}

type Outcome = Result<(Result<Score, EvalError>, f64), EvalError>;

fn run_pending(jobs: &[EvalJob], pending: &[usize], backend: &dyn Backend, budget: &EvalBudget, parallelism: usize) -> Vec<Outcome> {
    let slots: Vec<Mutex<Option<Outcome>>> = pending.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let k = next.fetch_add(1, Ordering::SeqCst);
        if k >= pending.len() {
            break;
        }
        let job = &jobs[pending[k]];
        let started = Instant::now();
        let outcome = match backend.score(job, budget) {
            Err(e @ EvalError::BackendUnavailable(_)) => Err(e),
            other => {
                let elapsed = if backend.source() == Source::Surrogate { 0.0 } else { started.elapsed().as_secs_f64() };
                Ok((other, elapsed))
            }
        };
        *slots[k].lock().expect("slot lock poisoned") = Some(outcome);
    };
    let workers = parallelism.min(pending.len());
    if workers <= 1 {
        work();
    } else {
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock poisoned").expect("every pending job ran"))
        .collect()
}
