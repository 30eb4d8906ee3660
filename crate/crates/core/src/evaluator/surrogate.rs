//! Synthetic fitness landscape with a planted high-reward block pair.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, EvalBudget, EvalError, EvalJob, Score, Source};
use crate::control::SetKey;
use crate::genome::{BlockKind, Genome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateSpec {
    pub planted_pair: SetKey,
    pub target_depth: usize,
    pub base: f64,
    pub pair_weight: f64,
    pub depth_penalty: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec {
            planted_pair: SetKey::new(BlockKind::Invr, BlockKind::Invr),
            target_depth: 7,
            base: 0.3,
            pair_weight: 0.5,
            depth_penalty: 0.02,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl SurrogateSpec {
    /// Number of occurrences of the planted pair among `g`'s adjacent pairs.
    pub fn planted_count(&self, g: &Genome) -> usize {
        g.adjacent_pairs().filter(|&p| SetKey::from(p) == self.planted_pair).count()
    }

    /// Noise term for `g`; deterministic in `(seed, digest)`.
    pub fn noise(&self, g: &Genome) -> f64 {
        if self.noise_sigma <= 0.0 {
            return 0.0;
        }
        let mut h = Sha256::new();
        h.update(b"evocell-surrogate-noise");
        h.update(self.seed.to_le_bytes());
        h.update(g.digest().as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        Normal::new(0.0, self.noise_sigma).expect("sigma is positive and finite").sample(&mut rng)
    }
}

/// `clamp(base + pair_weight * planted / max(1, len - 1)
///        - depth_penalty * |len - target_depth| + noise, 0, 1)`.
pub fn surrogate_accuracy(g: &Genome, spec: &SurrogateSpec) -> f64 {
    let len = g.len();
    let fraction = spec.planted_count(g) as f64 / (len.saturating_sub(1).max(1)) as f64;
    let depth_gap = len.abs_diff(spec.target_depth) as f64;
    let raw = spec.base + spec.pair_weight * fraction - spec.depth_penalty * depth_gap + spec.noise(g);
    raw.clamp(0.0, 1.0)
}

/// In-process backend scoring genomes with [`surrogate_accuracy`].
#[derive(Debug, Clone, Default)]
pub struct SurrogateBackend {
    pub spec: SurrogateSpec,
}

impl SurrogateBackend {
    pub fn new(spec: SurrogateSpec) -> Self {
        SurrogateBackend { spec }
    }
}

impl Backend for SurrogateBackend {
    fn source(&self) -> Source {
        Source::Surrogate
    }

    fn score(&self, job: &EvalJob, _budget: &EvalBudget) -> Result<Score, EvalError> {
        Ok(Score {
            accuracy: surrogate_accuracy(&job.genome, &self.spec),
            params: job.network.param_count,
            notes: String::new(),
        })
    }
}
