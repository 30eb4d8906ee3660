use serde::{Deserialize, Serialize};

use crate::genome::{Genome, GenomeDigest};

/// How an individual came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpTrace {
    Init,
    Crossover,
    Mutation,
    Clone,
    Handpick,
}

/// A genome together with its fitness record and lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Genome,
    pub digest: GenomeDigest,
    pub fitness: Option<f64>,
    pub params: u64,
    pub born_gen: u32,
    pub parent_digests: Vec<GenomeDigest>,
    pub op_trace: OpTrace,
    /// Set when evaluation failed and the fitness was forced to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

impl Individual {
    pub fn new(genome: Genome, params: u64, born_gen: u32, parent_digests: Vec<GenomeDigest>, op_trace: OpTrace) -> Self {
        let digest = genome.digest();
        Individual { genome, digest, fitness: None, params, born_gen, parent_digests, op_trace, flag: None }
    }

    pub fn is_evaluated(&self) -> bool {
        self.fitness.is_some()
    }

    /// Ordering used for selection and every "top" listing: fitness
    /// descending, then fewer parameters, then digest.
    pub fn rank_cmp(&self, other: &Individual) -> std::cmp::Ordering {
        let fa = self.fitness.unwrap_or(f64::NEG_INFINITY);
        let fb = other.fitness.unwrap_or(f64::NEG_INFINITY);
        fb.total_cmp(&fa)
            .then(self.params.cmp(&other.params))
            .then(self.digest.cmp(&other.digest))
    }
}
