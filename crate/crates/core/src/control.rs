//! Block presence ratios and set torques.
//!
//! Both control variables are computed per evaluated model and folded into
//! run-lifetime cumulative means. Every model contributes one presence
//! observation per block kind (zero when the kind is absent); torque keys
//! only receive observations from models that contain the pair.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{BlockKind, Genome};

/// An ordered pair of adjacent blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SetKey {
    pub first: BlockKind,
    pub second: BlockKind,
}

impl SetKey {
    pub fn new(first: BlockKind, second: BlockKind) -> Self {
        SetKey { first, second }
    }

    /// All 16 keys in lexicographic order.
    pub fn all() -> impl Iterator<Item = SetKey> {
        BlockKind::ALL
            .into_iter()
            .flat_map(|a| BlockKind::ALL.into_iter().map(move |b| SetKey::new(a, b)))
    }
}

impl From<(BlockKind, BlockKind)> for SetKey {
    fn from((first, second): (BlockKind, BlockKind)) -> Self {
        SetKey { first, second }
    }
}

impl fmt::Display for SetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.first, self.second)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid set key `{0}`")]
pub struct BadSetKey(String);

impl FromStr for SetKey {
    type Err = BadSetKey;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BadSetKey(s.to_string());
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        Ok(SetKey::new(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
    }
}

impl Serialize for SetKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SetKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-kind presence ratio of one model: `count(kind) / len * accuracy`.
///
/// All four kinds are present in the result.
pub fn presence_ratios(genome: &Genome, accuracy: f64) -> BTreeMap<BlockKind, f64> {
    let len = genome.len().max(1) as f64;
    let mut counts = [0usize; 4];
    for kind in genome.kinds() {
        counts[kind.index()] += 1;
    }
    BlockKind::ALL
        .into_iter()
        .map(|k| (k, counts[k.index()] as f64 / len * accuracy))
        .collect()
}

/// Per-set torque of one model: `count(pair) * accuracy` for every adjacent
/// pair that occurs.
pub fn set_torques(genome: &Genome, accuracy: f64) -> BTreeMap<SetKey, f64> {
    let mut counts: BTreeMap<SetKey, usize> = BTreeMap::new();
    for pair in genome.adjacent_pairs() {
        *counts.entry(pair.into()).or_default() += 1;
    }
    counts.into_iter().map(|(k, c)| (k, c as f64 * accuracy)).collect()
}

/// Cumulative mean of a stream of observations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "MeanDoc", into = "MeanDoc")]
pub struct RunningMean {
    sum: f64,
    n_obs: u64,
}

impl RunningMean {
    pub fn mean(&self) -> f64 {
        if self.n_obs == 0 {
            0.0
        } else {
            self.sum / self.n_obs as f64
        }
    }

    pub fn n_obs(&self) -> u64 {
        self.n_obs
    }

    fn absorb(&mut self, mut values: Vec<f64>) {
        values.sort_by(f64::total_cmp);
        for v in &values {
            self.sum += v;
        }
        self.n_obs += values.len() as u64;
    }
}

#[derive(Serialize, Deserialize)]
struct MeanDoc {
    mean: f64,
    n_obs: u64,
    sum: f64,
}

impl From<MeanDoc> for RunningMean {
    fn from(d: MeanDoc) -> Self {
        RunningMean { sum: d.sum, n_obs: d.n_obs }
    }
}

impl From<RunningMean> for MeanDoc {
    fn from(m: RunningMean) -> Self {
        MeanDoc { mean: m.mean(), n_obs: m.n_obs, sum: m.sum }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ControlError {
    #[error("control tables hold no observations yet")]
    EmptyTables,
}

/// Run-lifetime presence and torque statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlTables {
    pub presence: BTreeMap<BlockKind, RunningMean>,
    pub torque: BTreeMap<SetKey, RunningMean>,
}

impl ControlTables {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.presence.values().all(|m| m.n_obs == 0)
    }

    pub fn presence_mean(&self, kind: BlockKind) -> f64 {
        self.presence.get(&kind).map_or(0.0, RunningMean::mean)
    }

    pub fn torque_mean(&self, key: SetKey) -> f64 {
        self.torque.get(&key).map_or(0.0, RunningMean::mean)
    }

    /// Folds a batch of `(genome, accuracy)` observations into the tables.
    ///
    /// Within a batch, contributions to each key are summed in sorted order,
    /// so the result does not depend on batch order.
    pub fn update<'a, I>(&mut self, batch: I)
    where
        I: IntoIterator<Item = (&'a Genome, f64)>,
    {
        let mut presence: BTreeMap<BlockKind, Vec<f64>> = BTreeMap::new();
        let mut torque: BTreeMap<SetKey, Vec<f64>> = BTreeMap::new();
        for (genome, accuracy) in batch {
            for (k, v) in presence_ratios(genome, accuracy) {
                presence.entry(k).or_default().push(v);
            }
            for (k, v) in set_torques(genome, accuracy) {
                torque.entry(k).or_default().push(v);
            }
        }
        for (k, values) in presence {
            self.presence.entry(k).or_default().absorb(values);
        }
        for (k, values) in torque {
            self.torque.entry(k).or_default().absorb(values);
        }
    }

    /// Records a single presence observation for one kind.
    pub fn observe_presence(&mut self, kind: BlockKind, value: f64) {
        self.presence.entry(kind).or_default().absorb(vec![value]);
    }

    /// Records a single torque observation for one key.
    pub fn observe_torque(&mut self, key: SetKey, value: f64) {
        self.torque.entry(key).or_default().absorb(vec![value]);
    }

    /// Kind with the highest presence mean; ties go to the earliest kind.
    pub fn argmax_presence(&self) -> Result<BlockKind, ControlError> {
        self.extreme_presence(|candidate, best| candidate > best)
    }

    /// Kind with the lowest presence mean (unobserved kinds count as 0);
    /// ties go to the earliest kind.
    pub fn argmin_presence(&self) -> Result<BlockKind, ControlError> {
        self.extreme_presence(|candidate, best| candidate < best)
    }

    fn extreme_presence(&self, better: impl Fn(f64, f64) -> bool) -> Result<BlockKind, ControlError> {
        if self.is_empty() {
            return Err(ControlError::EmptyTables);
        }
        let mut best = BlockKind::ALL[0];
        let mut best_mean = self.presence_mean(best);
        for kind in &BlockKind::ALL[1..] {
            let m = self.presence_mean(*kind);
            if better(m, best_mean) {
                best = *kind;
                best_mean = m;
            }
        }
        Ok(best)
    }

    /// Candidate with the highest torque mean; ties go to the
    /// lexicographically first key. `None` only for an empty candidate set.
    pub fn max_torque_among(&self, candidates: &BTreeSet<SetKey>) -> Option<SetKey> {
        let mut best: Option<(SetKey, f64)> = None;
        for &key in candidates {
            let m = self.torque_mean(key);
            if best.is_none_or(|(_, bm)| m > bm) {
                best = Some((key, m));
            }
        }
        best.map(|(k, _)| k)
    }

    /// Torque means as a 4x4 grid indexed `[first][second]`.
    pub fn torque_matrix(&self) -> [[f64; 4]; 4] {
        let mut grid = [[0.0; 4]; 4];
        for key in SetKey::all() {
            grid[key.first.index()][key.second.index()] = self.torque_mean(key);
        }
        grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::LayerGene;
    use BlockKind::*;

    fn genome_of(kinds: &[BlockKind]) -> Genome {
        Genome::chained(8, kinds.iter().map(|&k| LayerGene::plain(k, 0, 8)).collect()).unwrap()
    }

    #[test]
    fn sixteen_keys() {
        let keys: BTreeSet<SetKey> = SetKey::all().collect();
        assert_eq!(keys.len(), 16);
    }

    #[test]
    fn set_key_text_round_trip() {
        for key in SetKey::all() {
            assert_eq!(key.to_string().parse::<SetKey>().unwrap(), key);
        }
        assert!("Invr".parse::<SetKey>().is_err());
        assert!("Invr-Foo".parse::<SetKey>().is_err());
    }

    #[test]
    fn presence_examples() {
        let r = presence_ratios(&genome_of(&[Bot; 4]), 1.0);
        assert_eq!(r[&Bot], 1.0);
        assert_eq!(r[&Invr] + r[&Res] + r[&CrLU], 0.0);

        let r = presence_ratios(&genome_of(&[Bot, Res, Res, Bot, Res, Res, Res, Res]), 0.5);
        assert_eq!(r[&Bot], 0.125);

        let r = presence_ratios(&genome_of(&[Invr, Res, CrLU]), 0.0);
        assert!(r.values().all(|&v| v == 0.0));
    }

    #[test]
    fn torque_examples() {
        let t = set_torques(&genome_of(&[Bot, Res, Bot]), 0.6);
        assert_eq!(t.len(), 2);
        assert_eq!(t[&SetKey::new(Bot, Res)], 0.6);
        assert_eq!(t[&SetKey::new(Res, Bot)], 0.6);

        let t = set_torques(&genome_of(&[Invr, Invr, Invr]), 0.5);
        assert_eq!(t, BTreeMap::from([(SetKey::new(Invr, Invr), 1.0)]));

        assert!(set_torques(&genome_of(&[CrLU]), 0.9).is_empty());
    }

    #[test]
    fn cumulative_presence() {
        let mut tables = ControlTables::new();
        tables.update([(&genome_of(&[Bot; 4]), 1.0)]);
        assert_eq!(tables.presence[&Bot].mean(), 1.0);
        assert_eq!(tables.presence[&Bot].n_obs(), 1);
        tables.update([(&genome_of(&[Res, Invr]), 0.8)]);
        assert_eq!(tables.presence[&Bot].mean(), 0.5);
        assert_eq!(tables.presence[&Bot].n_obs(), 2);
        // torque keys only see models containing them
        assert_eq!(tables.torque[&SetKey::new(Bot, Bot)].n_obs(), 1);
        assert_eq!(tables.torque[&SetKey::new(Res, Invr)].n_obs(), 1);
    }

    #[test]
    fn argmax_argmin_and_ties() {
        let mut t = ControlTables::new();
        for (k, v) in [(Invr, 0.4), (Res, 0.1), (Bot, 0.2), (CrLU, 0.2)] {
            t.observe_presence(k, v);
        }
        assert_eq!(t.argmax_presence(), Ok(Invr));
        assert_eq!(t.argmin_presence(), Ok(Res));

        let mut t = ControlTables::new();
        for k in BlockKind::ALL {
            t.observe_presence(k, 0.3);
        }
        assert_eq!(t.argmax_presence(), Ok(Invr));
        assert_eq!(t.argmin_presence(), Ok(Invr));
    }

    #[test]
    fn only_bot_observed() {
        let mut t = ControlTables::new();
        t.observe_presence(Bot, 0.7);
        assert_eq!(t.argmax_presence(), Ok(Bot));
        assert_eq!(t.argmin_presence(), Ok(Invr));
    }

    #[test]
    fn empty_tables_error() {
        let t = ControlTables::new();
        assert_eq!(t.argmax_presence(), Err(ControlError::EmptyTables));
        assert_eq!(t.argmin_presence(), Err(ControlError::EmptyTables));
    }

    #[test]
    fn max_torque_examples() {
        let mut t = ControlTables::new();
        t.observe_torque(SetKey::new(Invr, Bot), 1.2);
        t.observe_torque(SetKey::new(Res, Res), 0.4);
        let both = BTreeSet::from([SetKey::new(Invr, Bot), SetKey::new(Res, Res)]);
        assert_eq!(t.max_torque_among(&both), Some(SetKey::new(Invr, Bot)));

        let unseen = BTreeSet::from([SetKey::new(CrLU, Bot), SetKey::new(Res, CrLU)]);
        assert_eq!(ControlTables::new().max_torque_among(&unseen), Some(SetKey::new(Res, CrLU)));

        let one = BTreeSet::from([SetKey::new(Bot, Bot)]);
        assert_eq!(t.max_torque_among(&one), Some(SetKey::new(Bot, Bot)));
        assert_eq!(t.max_torque_among(&BTreeSet::new()), None);
    }

    #[test]
    fn tables_serialize_with_string_keys() {
        let mut t = ControlTables::new();
        t.update([(&genome_of(&[Invr, Bot, Res]), 0.5)]);
        let text = serde_json::to_string(&t).unwrap();
        assert!(text.contains("\"Invr-Bot\""));
        let back: ControlTables = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn torque_matrix_layout() {
        let mut t = ControlTables::new();
        t.observe_torque(SetKey::new(Res, CrLU), 0.9);
        let m = t.torque_matrix();
        assert_eq!(m[1][3], 0.9);
        assert_eq!(m.iter().flatten().filter(|&&v| v != 0.0).count(), 1);
    }
}
