//! Surrogate benchmarks: torque-guided versus random-cut crossover, and a
//! random-search baseline with the same evaluation budget.

use serde::{Deserialize, Serialize};

use crate::engine::{random_genome, BackendConfig, Engine, EngineError, NoInterventions, RunConfig};
use crate::evaluator::{surrogate_accuracy, SurrogateSpec};
use crate::genome::Genome;
use crate::rng::{Purpose, RngStreams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Guided,
    Unguided,
    RandomSearch,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Guided => "guided",
            Variant::Unguided => "unguided",
            Variant::RandomSearch => "random_search",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub seed: u64,
    pub variant: Variant,
    pub best_fitness: f64,
    /// Planted-pair occurrences in the best genome.
    pub planted_pairs: usize,
    pub best_depth: usize,
    /// Distinct genomes scored.
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    pub mean_best: f64,
    pub median_best: f64,
    /// Fraction of runs whose best genome holds at least three planted pairs.
    pub planted3_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub generations: u32,
    pub rows: Vec<BenchRow>,
    pub summaries: Vec<VariantSummary>,
    /// Seeds where guided beat, tied and lost to unguided.
    pub guided_wins: usize,
    pub ties: usize,
    pub guided_losses: usize,
}

impl BenchReport {
    pub fn summary(&self, variant: Variant) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }
}

/// The surrogate spec configured in `cfg`, or the default landscape.
fn surrogate_of(cfg: &RunConfig) -> SurrogateSpec {
    match &cfg.backend {
        BackendConfig::Surrogate(spec) => spec.clone(),
        BackendConfig::External { .. } => SurrogateSpec::default(),
    }
}

/// One in-memory evolutionary run of `generations` phase-1 steps.
pub fn evolve(base: &RunConfig, seed: u64, variant: Variant, generations: u32) -> Result<BenchRow, EngineError> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.phase1_generations = generations;
    cfg.backend = BackendConfig::Surrogate(surrogate_of(base));
    if variant == Variant::Unguided {
        cfg.operators.p_torque_guided = 0.0;
    }
    let spec = surrogate_of(&cfg);
    let mut engine = Engine::new(cfg)?;
    let report = engine.run(&mut NoInterventions)?;
    let best = report.best.expect("at least one generation ran");
    Ok(BenchRow {
        seed,
        variant,
        best_fitness: best.fitness.expect("evaluated"),
        planted_pairs: spec.planted_count(&best.genome),
        best_depth: best.genome.len(),
        evaluations: engine.cache().len(),
    })
}

/// Best of `evaluations` independent random genomes drawn like the initial
/// population.
pub fn random_search(base: &RunConfig, seed: u64, evaluations: usize) -> BenchRow {
    let spec = surrogate_of(base);
    let mut rngs = RngStreams::new(seed);
    let rng = rngs.get(Purpose::Init);
    let mut best: Option<(f64, Genome)> = None;
    for _ in 0..evaluations.max(1) {
        let g = random_genome(base, rng);
        let acc = surrogate_accuracy(&g, &spec);
        let better = match &best {
            None => true,
            Some((b, bg)) => acc > *b || (acc == *b && g.digest() < bg.digest()),
        };
        if better {
            best = Some((acc, g));
        }
    }
    let (best_fitness, genome) = best.expect("at least one sample");
    BenchRow {
        seed,
        variant: Variant::RandomSearch,
        best_fitness,
        planted_pairs: spec.planted_count(&genome),
        best_depth: genome.len(),
        evaluations,
    }
}

/// Runs guided, unguided and random search for every seed in `0..seeds`.
/// Random search gets the guided run's evaluation count.
pub fn ablation(base: &RunConfig, seeds: u64, generations: u32) -> Result<BenchReport, EngineError> {
    let mut rows = Vec::new();
    let (mut wins, mut ties, mut losses) = (0, 0, 0);
    for seed in 0..seeds {
        let guided = evolve(base, seed, Variant::Guided, generations)?;
        let unguided = evolve(base, seed, Variant::Unguided, generations)?;
        let random = random_search(base, seed, guided.evaluations);
        match guided.best_fitness.total_cmp(&unguided.best_fitness) {
            std::cmp::Ordering::Greater => wins += 1,
            std::cmp::Ordering::Equal => ties += 1,
            std::cmp::Ordering::Less => losses += 1,
        }
        rows.extend([guided, unguided, random]);
    }
    let summaries = [Variant::Guided, Variant::Unguided, Variant::RandomSearch]
        .into_iter()
        .map(|v| summarize(v, &rows))
        .collect();
    Ok(BenchReport { generations, rows, summaries, guided_wins: wins, ties, guided_losses: losses })
}

pub fn summarize(variant: Variant, rows: &[BenchRow]) -> VariantSummary {
    let mut best: Vec<f64> = rows.iter().filter(|r| r.variant == variant).map(|r| r.best_fitness).collect();
    best.sort_by(f64::total_cmp);
    let n = best.len();
    let planted = rows.iter().filter(|r| r.variant == variant && r.planted_pairs >= 3).count();
    VariantSummary {
        variant,
        runs: n,
        mean_best: if n == 0 { f64::NAN } else { best.iter().sum::<f64>() / n as f64 },
        median_best: median(&best),
        planted3_fraction: if n == 0 { f64::NAN } else { planted as f64 / n as f64 },
    }
}

/// Median of sorted values; the mean of the middle two for even counts.
pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => sorted[n / 2],
        _ => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
    }
}
