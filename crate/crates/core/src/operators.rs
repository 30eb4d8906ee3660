//! Crossover, mutation and truncation selection.
//!
//! Crossover is torque guided: when both parents share an adjacent block
//! pair, the shared pair with the highest torque decides where each parent
//! is cut. Mutation adds or removes blocks, guided by presence ratios for
//! two of its four actions.

use std::collections::BTreeSet;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compile::ChannelSchedule;
use crate::control::{ControlTables, SetKey};
use crate::genome::{BlockKind, Genome, GenomeDigest, LayerGene, DEFAULT_MAX_DEPTH};
use crate::individual::{Individual, OpTrace};
use crate::rng::{Draw, Purpose, RngStreams};

/// Forced extra mutations tried when an offspring duplicates a known genome.
pub const DEDUP_ATTEMPTS: usize = 5;

/// Which presence extreme the guided removal targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemoveRule {
    #[default]
    Lowest,
    Highest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorConfig {
    pub p_crossover: f64,
    pub p_torque_guided: f64,
    pub p_mutation: f64,
    pub mutation_remove: RemoveRule,
    pub max_depth: usize,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig {
            p_crossover: 0.4,
            p_torque_guided: 0.5,
            p_mutation: 0.6,
            mutation_remove: RemoveRule::Lowest,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("probability `{name}` = {value} is outside [0, 1]")]
    BadProbability { name: &'static str, value: f64 },
    #[error("max_depth must be at least 1")]
    ZeroDepth,
    #[error("individual {0} has not been evaluated")]
    UnevaluatedIndividual(GenomeDigest),
    #[error("survivor count {k} must lie in 1..={len}")]
    BadSurvivorCount { k: usize, len: usize },
}

impl OperatorConfig {
    pub fn validate(&self) -> Result<(), OperatorError> {
        for (name, value) in [
            ("p_crossover", self.p_crossover),
            ("p_torque_guided", self.p_torque_guided),
            ("p_mutation", self.p_mutation),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(OperatorError::BadProbability { name, value });
            }
        }
        if self.max_depth == 0 {
            return Err(OperatorError::ZeroDepth);
        }
        Ok(())
    }
}

/// Output width given to inserted genes.
#[derive(Debug, Clone, PartialEq)]
pub enum WidthPolicy {
    /// Every inserted gene gets the same width.
    Uniform(u32),
    /// Inserted genes take the schedule anchor at their insertion depth.
    Schedule(ChannelSchedule),
}

impl WidthPolicy {
    pub fn width_at(&self, position: usize) -> u32 {
        match self {
            WidthPolicy::Uniform(w) => *w,
            WidthPolicy::Schedule(s) => s.width_at(position),
        }
    }
}

/// Which crossover path produced a pair of children.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossoverBranch {
    /// Parents were identical; children are copies.
    Identical,
    /// Cut at the highest-torque shared set.
    Guided(SetKey),
    /// Independent uniform cut points.
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossoverOutcome {
    pub children: (Genome, Genome),
    pub branch: CrossoverBranch,
    pub cuts: (usize, usize),
}

/// Head/tail exchange: `a[..cut_a] + b[cut_b..]` and `b[..cut_b] + a[cut_a..]`.
fn splice(a: &Genome, b: &Genome, cut_a: usize, cut_b: usize, max_depth: usize) -> (Genome, Genome) {
    let join = |head: &Genome, cut_h: usize, tail: &Genome, cut_t: usize| {
        let layers: Vec<LayerGene> = head.layers()[..cut_h].iter().chain(&tail.layers()[cut_t..]).copied().collect();
        Genome::chained(head.stem_out(), layers)
            .expect("spliced child keeps at least one gene")
            .clamp_depth(max_depth)
    };
    (join(a, cut_a, b, cut_b), join(b, cut_b, a, cut_a))
}

fn first_occurrence(g: &Genome, key: SetKey) -> Option<usize> {
    g.adjacent_pairs().position(|p| SetKey::from(p) == key)
}

/// Random interior cut, or 1 for a single-gene parent.
fn random_cut(rng: &mut impl RngCore, len: usize) -> usize {
    if len >= 2 {
        1 + rng.index(len - 1)
    } else {
        1
    }
}

/// Crosses two valid parents.
///
/// On the guided branch the shared set `s` with the highest torque is
/// located at its first occurrence in each parent; the first parent is cut
/// between the pair's two genes and the second parent just before the pair,
/// so the first child inherits the pair intact from the second parent.
pub fn crossover(
    a: &Genome,
    b: &Genome,
    tables: &ControlTables,
    cfg: &OperatorConfig,
    rng: &mut impl RngCore,
) -> CrossoverOutcome {
    if a == b {
        return CrossoverOutcome { children: (a.clone(), b.clone()), branch: CrossoverBranch::Identical, cuts: (0, 0) };
    }
    if rng.chance(cfg.p_torque_guided) {
        let sets_a: BTreeSet<SetKey> = a.adjacent_pairs().map(SetKey::from).collect();
        let shared: BTreeSet<SetKey> = b.adjacent_pairs().map(SetKey::from).filter(|k| sets_a.contains(k)).collect();
        if let Some(key) = tables.max_torque_among(&shared) {
            let pos_a = first_occurrence(a, key).expect("shared set occurs in a");
            let pos_b = first_occurrence(b, key).expect("shared set occurs in b");
            let cuts = (pos_a + 1, pos_b);
            return CrossoverOutcome {
                children: splice(a, b, cuts.0, cuts.1, cfg.max_depth),
                branch: CrossoverBranch::Guided(key),
                cuts,
            };
        }
    }
    let cuts = (random_cut(rng, a.len()), random_cut(rng, b.len()));
    CrossoverOutcome { children: splice(a, b, cuts.0, cuts.1, cfg.max_depth), branch: CrossoverBranch::Random, cuts }
}

/// The four mutation actions, drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationAction {
    /// Insert a gene of the highest-presence kind.
    AddBest,
    /// Remove the first gene of the lowest-presence kind (or highest, per
    /// [`RemoveRule`]).
    RemoveGuided,
    /// Insert a gene of a random kind.
    AddRandom,
    /// Remove a random gene.
    RemoveRandom,
}

impl MutationAction {
    pub const ALL: [MutationAction; 4] =
        [MutationAction::AddBest, MutationAction::RemoveGuided, MutationAction::AddRandom, MutationAction::RemoveRandom];

    fn is_insertion(self) -> bool {
        matches!(self, MutationAction::AddBest | MutationAction::AddRandom)
    }

    /// The opposite-direction action used when a length bound blocks this one.
    fn mirror(self) -> MutationAction {
        match self {
            MutationAction::AddBest => MutationAction::RemoveGuided,
            MutationAction::RemoveGuided => MutationAction::AddBest,
            MutationAction::AddRandom => MutationAction::RemoveRandom,
            MutationAction::RemoveRandom => MutationAction::AddRandom,
        }
    }
}

/// Mutates a valid genome with a uniformly drawn action. Returns the result
/// and the action actually applied after fallbacks.
pub fn mutate(
    g: &Genome,
    tables: &ControlTables,
    cfg: &OperatorConfig,
    rng: &mut impl RngCore,
    width: &WidthPolicy,
) -> (Genome, MutationAction) {
    let action = rng.pick(&MutationAction::ALL);
    mutate_with(g, action, tables, cfg, rng, width)
}

/// Applies a specific mutation action.
///
/// Removals on a single-gene genome and insertions on a genome at
/// `max_depth` switch to the mirrored action. A guided removal whose target
/// kind is absent removes a random gene instead. Before any evaluation the
/// guided actions fall back to their random counterparts.
pub fn mutate_with(
    g: &Genome,
    action: MutationAction,
    tables: &ControlTables,
    cfg: &OperatorConfig,
    rng: &mut impl RngCore,
    width: &WidthPolicy,
) -> (Genome, MutationAction) {
    let mut action = action;
    if (!action.is_insertion() && g.len() <= 1) || (action.is_insertion() && g.len() >= cfg.max_depth) {
        action = action.mirror();
    }
    let mut layers = g.layers().to_vec();
    match action {
        MutationAction::AddBest | MutationAction::AddRandom => {
            let pos = rng.between(0, layers.len());
            let kind = match (action, tables.argmax_presence()) {
                (MutationAction::AddBest, Ok(kind)) => kind,
                _ => rng.pick(&BlockKind::ALL),
            };
            let expand = if kind == BlockKind::Invr { rng.pick(&[1, 6]) } else { 1 };
            layers.insert(pos, LayerGene::new(kind, 0, width.width_at(pos), 1, expand));
        }
        MutationAction::RemoveGuided | MutationAction::RemoveRandom => {
            let target = if action == MutationAction::RemoveGuided {
                let kind = match cfg.mutation_remove {
                    RemoveRule::Lowest => tables.argmin_presence(),
                    RemoveRule::Highest => tables.argmax_presence(),
                };
                kind.ok().and_then(|k| layers.iter().position(|l| l.kind() == k))
            } else {
                None
            };
            let index = match target {
                Some(i) => i,
                None => {
                    action = MutationAction::RemoveRandom;
                    rng.index(layers.len())
                }
            };
            layers.remove(index);
        }
    }
    let out = Genome::chained(g.stem_out(), layers)
        .expect("mutation keeps at least one gene")
        .clamp_depth(cfg.max_depth);
    (out, action)
}

/// Keeps the `k` best individuals, sorted by (fitness desc, params asc,
/// digest asc).
pub fn select_survivors(pop: &[Individual], k: usize) -> Result<Vec<Individual>, OperatorError> {
    if k == 0 || k > pop.len() {
        return Err(OperatorError::BadSurvivorCount { k, len: pop.len() });
    }
    if let Some(ind) = pop.iter().find(|i| !i.is_evaluated()) {
        return Err(OperatorError::UnevaluatedIndividual(ind.digest));
    }
    let mut ranked = pop.to_vec();
    ranked.sort_by(Individual::rank_cmp);
    ranked.truncate(k);
    Ok(ranked)
}

/// A genome produced by [`make_offspring`] together with its lineage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Offspring {
    pub genome: Genome,
    pub parents: Vec<GenomeDigest>,
    pub op: OpTrace,
}

/// Breeds `target_size - survivors.len()` offspring from uniformly drawn
/// parent pairs.
///
/// Outputs are deduplicated by digest against the survivors and each other:
/// a duplicate receives up to [`DEDUP_ATTEMPTS`] extra mutations and is
/// accepted as-is afterwards (or immediately when `p_mutation` is zero).
pub fn make_offspring(
    survivors: &[Genome],
    target_size: usize,
    tables: &ControlTables,
    cfg: &OperatorConfig,
    rngs: &mut RngStreams,
    width: &WidthPolicy,
) -> Vec<Offspring> {
    assert!(!survivors.is_empty(), "make_offspring needs at least one survivor");
    let needed = target_size.saturating_sub(survivors.len());
    let mut seen: BTreeSet<GenomeDigest> = survivors.iter().map(Genome::digest).collect();
    let mut out = Vec::with_capacity(needed);

    while out.len() < needed {
        let pairing = rngs.get(Purpose::Pairing);
        let ia = pairing.index(survivors.len());
        let ib = pairing.index(survivors.len());
        let crossed = pairing.chance(cfg.p_crossover);
        let (pa, pb) = (&survivors[ia], &survivors[ib]);
        let parents = if ia == ib { vec![pa.digest()] } else { vec![pa.digest(), pb.digest()] };

        let (ca, cb) = if crossed {
            crossover(pa, pb, tables, cfg, rngs.get(Purpose::Crossover)).children
        } else {
            (pa.clone(), pb.clone())
        };

        for (child, parent) in [(ca, vec![pa.digest()]), (cb, vec![pb.digest()])] {
            if out.len() >= needed {
                break;
            }
            let mrng = rngs.get(Purpose::Mutation);
            let mut genome = child;
            let mut mutated = false;
            if mrng.chance(cfg.p_mutation) {
                genome = mutate(&genome, tables, cfg, mrng, width).0;
                mutated = true;
            }
            if cfg.p_mutation > 0.0 {
                let mut attempts = 0;
                while seen.contains(&genome.digest()) && attempts < DEDUP_ATTEMPTS {
                    genome = mutate(&genome, tables, cfg, mrng, width).0;
                    mutated = true;
                    attempts += 1;
                }
            }
            seen.insert(genome.digest());
            let op = match (crossed, mutated) {
                (true, _) => OpTrace::Crossover,
                (false, true) => OpTrace::Mutation,
                (false, false) => OpTrace::Clone,
            };
            let parents = if crossed { parents.clone() } else { parent };
            out.push(Offspring { genome, parents, op });
        }
    }
    out
}
