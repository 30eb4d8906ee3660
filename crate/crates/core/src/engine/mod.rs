//! The generation loop.
//!
//! One [`Engine`] owns the run state. Each [`step`](Engine::step) evaluates
//! the unevaluated members, folds the new fitness values into the control
//! tables, selects survivors, breeds offspring and writes
//! `gen_NNNN.json` atomically. Interventions are applied only between
//! steps.
//!
//! Run directory:
//!
//! ```text
//! run/config.json       RunConfig
//! run/gen_0000.json     RunCheckpoint after init, then one per generation
//! run/cache.jsonl       evaluation journal
//! run/report.json       RunReport of the last finished `run`
//! run/control.mailbox   pending interventions
//! ```

mod checkpoint;
mod config;
mod intervention;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{checkpoint_name, latest_checkpoint, parse_checkpoint_name, HistoryRow, RunCheckpoint, FORMAT_VERSION};
pub use config::{BackendConfig, RunConfig};
pub use intervention::{Intervention, InterventionSource, Mailbox, NoInterventions, Scripted, MAILBOX_FILE};

use crate::compile::{compile, schedule_channels};
use crate::control::ControlTables;
use crate::evaluator::{evaluate_batch, Backend, EvalCache, EvalError, EvalJob};
use crate::genome::{BlockKind, Genome, GenomeDigest, LayerGene};
use crate::individual::{Individual, OpTrace};
use crate::operators::{make_offspring, select_survivors, OperatorError, WidthPolicy};
use crate::rng::{Draw, Purpose, RngStreams};

pub const CONFIG_FILE: &str = "config.json";
pub const CACHE_FILE: &str = "cache.jsonl";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u64, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint write failed: {0}")]
    CheckpointWrite(String),
    #[error("run directory error: {0}")]
    RunDir(String),
    #[error("unknown genome digest `{0}`")]
    UnknownDigest(String),
    #[error("digest prefix `{0}` matches more than one genome")]
    AmbiguousDigest(String),
    #[error("invalid phase transition: {0}")]
    InvalidPhaseTransition(String),
    #[error("the run has been stopped")]
    Stopped,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Outcome of [`Engine::run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub best: Option<Individual>,
    pub history: Vec<HistoryRow>,
    pub generation: u32,
    pub phase: u8,
    pub paused: bool,
    pub stopped: bool,
    /// Path of the last checkpoint written, when the run has a directory.
    pub final_checkpoint: Option<PathBuf>,
    /// Interventions that were rejected, with the reason.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<String>,
}

pub struct Engine {
    state: RunCheckpoint,
    rngs: RngStreams,
    backend: Box<dyn Backend>,
    cache: EvalCache,
    run_dir: Option<PathBuf>,
    last_checkpoint: Option<PathBuf>,
    rejected: Vec<String>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("generation", &self.state.generation)
            .field("phase", &self.state.phase)
            .field("run_dir", &self.run_dir)
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// A fresh in-memory run.
    pub fn new(config: RunConfig) -> Result<Self, EngineError> {
        config.validate().map_err(EngineError::Config)?;
        let mut rngs = RngStreams::new(config.seed);
        let population = initial_population(&config, &mut rngs);
        let state = RunCheckpoint {
            format_version: FORMAT_VERSION,
            generation: 0,
            phase: 1,
            paused: false,
            stopped: false,
            phase2_start: None,
            population,
            tables: ControlTables::new(),
            rng: rngs.state(),
            history: Vec::new(),
            hall_of_fame: Vec::new(),
            next_request_id: 1,
            config,
        };
        let backend = state.config.backend.build();
        Ok(Engine {
            state,
            rngs,
            backend,
            cache: EvalCache::in_memory(),
            run_dir: None,
            last_checkpoint: None,
            rejected: Vec::new(),
        })
    }

    /// Creates `run_dir` and writes `config.json` and `gen_0000.json`.
    pub fn init(config: RunConfig, run_dir: impl AsRef<Path>) -> Result<Self, EngineError> {
        let run_dir = run_dir.as_ref();
        let mut engine = Self::new(config)?;
        fs::create_dir_all(run_dir).map_err(|e| EngineError::RunDir(format!("{}: {e}", run_dir.display())))?;
        if latest_checkpoint(run_dir)?.is_some() {
            return Err(EngineError::RunDir(format!("{} already holds a run", run_dir.display())));
        }
        let mut cfg = serde_json::to_string_pretty(&engine.state.config).expect("configs serialize");
        cfg.push('\n');
        checkpoint::write_atomic(&run_dir.join(CONFIG_FILE), cfg.as_bytes())?;
        engine.attach(run_dir)?;
        engine.persist()?;
        Ok(engine)
    }

    /// Reopens the latest checkpoint in `run_dir`.
    pub fn open(run_dir: impl AsRef<Path>) -> Result<Self, EngineError> {
        let run_dir = run_dir.as_ref();
        let (_, path) = latest_checkpoint(run_dir)?
            .ok_or_else(|| EngineError::RunDir(format!("no checkpoints in {}", run_dir.display())))?;
        let mut engine = Self::from_checkpoint(RunCheckpoint::load(&path)?)?;
        engine.attach(run_dir)?;
        engine.last_checkpoint = Some(path);
        Ok(engine)
    }

    /// An in-memory engine continuing from `state`.
    pub fn from_checkpoint(state: RunCheckpoint) -> Result<Self, EngineError> {
        state.config.validate().map_err(EngineError::Config)?;
        let rngs = RngStreams::from_state(&state.rng).map_err(|e| EngineError::CorruptCheckpoint(format!("rng state: {e}")))?;
        let backend = state.config.backend.build();
        Ok(Engine {
            state,
            rngs,
            backend,
            cache: EvalCache::in_memory(),
            run_dir: None,
            last_checkpoint: None,
            rejected: Vec::new(),
        })
    }

    fn attach(&mut self, run_dir: &Path) -> Result<(), EngineError> {
        self.cache = EvalCache::open(run_dir.join(CACHE_FILE))
            .map_err(|e| EngineError::RunDir(format!("{}: {e}", run_dir.join(CACHE_FILE).display())))?;
        self.run_dir = Some(run_dir.to_path_buf());
        Ok(())
    }

    /// Replaces the evaluator without touching the recorded config.
    pub fn with_backend(mut self, backend: Box<dyn Backend>) -> Self {
        self.backend = backend;
        self
    }

    /// Switches the evaluator and records the choice in the config.
    pub fn set_backend(&mut self, backend: BackendConfig) {
        self.backend = backend.build();
        self.state.config.backend = backend;
    }

    /// Concurrent evaluations per batch; recorded in the config.
    pub fn set_parallelism(&mut self, parallelism: usize) {
        self.state.config.parallelism = parallelism.max(1);
    }

    pub fn state(&self) -> &RunCheckpoint {
        &self.state
    }

    pub fn config(&self) -> &RunConfig {
        &self.state.config
    }

    pub fn generation(&self) -> u32 {
        self.state.generation
    }

    pub fn cache(&self) -> &EvalCache {
        &self.cache
    }

    pub fn run_dir(&self) -> Option<&Path> {
        self.run_dir.as_deref()
    }

    pub fn last_checkpoint(&self) -> Option<&Path> {
        self.last_checkpoint.as_deref()
    }

    /// Generation at which the current schedule ends: phase 1 length, or
    /// phase 2 length after the rescheduling hand-pick.
    pub fn target_generation(&self) -> u32 {
        match self.state.phase2_start {
            None => self.state.config.phase1_generations,
            Some(start) => start + self.state.config.phase2_generations,
        }
    }

    /// Rewrites the current generation's checkpoint, when the run has a
    /// directory.
    pub fn persist(&mut self) -> Result<(), EngineError> {
        if let Some(dir) = &self.run_dir {
            let path = dir.join(checkpoint_name(self.state.generation));
            self.state.save(&path)?;
            self.last_checkpoint = Some(path);
        }
        Ok(())
    }

    /// One generation. On a checkpoint write failure the engine state is
    /// left as it was before the call.
    pub fn step(&mut self) -> Result<HistoryRow, EngineError> {
        if self.state.stopped {
            return Err(EngineError::Stopped);
        }
        let mut next = self.state.clone();
        let mut rngs = self.rngs.clone();
        let cfg = next.config.clone();

        let (fresh, failures) = self.evaluate(&mut next)?;
        next.tables.update(fresh.iter().map(|&i| {
            let ind = &next.population[i];
            (&ind.genome, ind.fitness.expect("just evaluated"))
        }));
        merge_hall_of_fame(&mut next.hall_of_fame, &next.population, cfg.hall_of_fame_size);

        let row = history_row(&next, fresh.len() + failures, failures);

        let survivors = select_survivors(&next.population, cfg.survivors())?;
        debug_assert!({
            let mut ranked = next.population.clone();
            ranked.sort_by(Individual::rank_cmp);
            ranked.iter().take(cfg.elitism).all(|e| survivors.iter().any(|s| s.digest == e.digest))
        });
        let parents: Vec<Genome> = survivors.iter().map(|s| s.genome.clone()).collect();
        let width = width_policy(&next);
        let offspring = make_offspring(&parents, cfg.population_size, &next.tables, &cfg.operators, &mut rngs, &width);

        let born = next.generation + 1;
        let spec = cfg.compile_spec();
        next.population = survivors;
        next.population.extend(offspring.into_iter().map(|o| {
            let params = compile(&o.genome, &spec).map(|n| n.param_count).unwrap_or(0);
            Individual::new(o.genome, params, born, o.parents, o.op)
        }));
        debug_assert_eq!(next.population.len(), cfg.population_size);
        next.generation = born;
        next.history.push(row.clone());
        next.rng = rngs.state();

        if let Some(dir) = &self.run_dir {
            let path = dir.join(checkpoint_name(next.generation));
            next.save(&path)?;
            self.last_checkpoint = Some(path);
        }
        self.state = next;
        self.rngs = rngs;
        log::info!(
            "generation {} (phase {}): best {:.4} mean {:.4} worst {:.4}",
            row.generation,
            row.phase,
            row.best,
            row.mean,
            row.worst
        );
        Ok(row)
    }

    /// Scores the unevaluated members of `state.population`. Returns the
    /// indices that received a real fitness and the number of failures.
    fn evaluate(&self, state: &mut RunCheckpoint) -> Result<(Vec<usize>, usize), EngineError> {
        let spec = state.config.compile_spec();
        let mut jobs = Vec::new();
        let mut slots = Vec::new();
        let mut failures = 0;
        for (i, ind) in state.population.iter_mut().enumerate().filter(|(_, ind)| !ind.is_evaluated()) {
            match compile(&ind.genome, &spec) {
                Ok(network) => {
                    ind.params = network.param_count;
                    jobs.push(EvalJob { id: state.next_request_id, genome: ind.genome.clone(), network });
                    state.next_request_id += 1;
                    slots.push(i);
                }
                Err(e) => {
                    ind.fitness = Some(0.0);
                    ind.flag = Some(format!("compile failed: {e}"));
                    failures += 1;
                }
            }
        }
        let results =
            evaluate_batch(&jobs, self.backend.as_ref(), &state.config.budget, &self.cache, state.config.parallelism)?;
        let mut fresh = Vec::new();
        for (i, r) in slots.into_iter().zip(results) {
            let ind = &mut state.population[i];
            ind.fitness = Some(r.accuracy);
            match r.failure {
                Some(reason) => {
                    log::warn!("evaluation of {} failed: {reason}", ind.digest.short(12));
                    ind.flag = Some(reason);
                    failures += 1;
                }
                None => fresh.push(i),
            }
        }
        Ok((fresh, failures))
    }

    /// Applies one intervention. Invalid interventions leave the state
    /// untouched.
    pub fn apply(&mut self, intervention: Intervention) -> Result<(), EngineError> {
        match intervention {
            Intervention::Pause => self.state.paused = true,
            Intervention::Resume => self.state.paused = false,
            Intervention::Stop => self.state.stopped = true,
            Intervention::HandPick { digests, reschedule_channels } => self.hand_pick(&digests, reschedule_channels)?,
        }
        Ok(())
    }

    /// Checks an intervention against the current state without applying it.
    pub fn check(state: &RunCheckpoint, intervention: &Intervention) -> Result<(), EngineError> {
        let Intervention::HandPick { digests, reschedule_channels } = intervention else { return Ok(()) };
        if digests.is_empty() {
            return Err(EngineError::InvalidPhaseTransition("hand-pick needs at least one digest".into()));
        }
        for d in digests {
            if state.find(d).is_none() {
                return Err(EngineError::UnknownDigest(d.to_hex()));
            }
        }
        let unique: BTreeSet<&GenomeDigest> = digests.iter().collect();
        if unique.len() > state.config.population_size {
            return Err(EngineError::InvalidPhaseTransition(format!(
                "{} picks exceed the population size {}",
                unique.len(),
                state.config.population_size
            )));
        }
        if *reschedule_channels && state.phase2_start.is_some() {
            return Err(EngineError::InvalidPhaseTransition("channels were already rescheduled for phase 2".into()));
        }
        Ok(())
    }

    fn hand_pick(&mut self, digests: &[GenomeDigest], reschedule: bool) -> Result<(), EngineError> {
        Self::check(&self.state, &Intervention::HandPick { digests: digests.to_vec(), reschedule_channels: reschedule })?;
        let cfg = self.state.config.clone();
        let spec = cfg.compile_spec();
        let generation = self.state.generation;

        let mut seen = BTreeSet::new();
        let mut picks: Vec<Individual> = Vec::new();
        for d in digests {
            if !seen.insert(*d) {
                continue;
            }
            let source = self.state.find(d).expect("checked above").clone();
            if reschedule {
                let genome = schedule_channels(&source.genome, &cfg.schedule);
                let params = compile(&genome, &spec).map(|n| n.param_count).unwrap_or(0);
                picks.push(Individual::new(genome, params, generation, vec![source.digest], OpTrace::Handpick));
            } else {
                picks.push(source);
            }
        }

        let mut next = self.state.clone();
        let mut rngs = self.rngs.clone();
        if reschedule {
            next.phase = 2;
            next.phase2_start = Some(generation);
            if cfg.reset_tables_on_phase2 {
                next.tables = ControlTables::new();
            }
        }
        let parents: Vec<Genome> = picks.iter().map(|p| p.genome.clone()).collect();
        let width = width_policy(&next);
        let offspring = make_offspring(&parents, cfg.population_size, &next.tables, &cfg.operators, &mut rngs, &width);
        next.population = picks;
        next.population.extend(offspring.into_iter().map(|o| {
            let params = compile(&o.genome, &spec).map(|n| n.param_count).unwrap_or(0);
            Individual::new(o.genome, params, generation, o.parents, o.op)
        }));
        next.rng = rngs.state();
        self.state = next;
        self.rngs = rngs;
        Ok(())
    }

    /// Consumes due interventions. Returns `false` when the run should end
    /// here.
    fn boundary(&mut self, source: &mut dyn InterventionSource, end: Option<u32>) -> Result<bool, EngineError> {
        let mut changed = self.absorb(source.poll(self.state.generation));
        loop {
            if self.state.stopped {
                if changed {
                    self.persist()?;
                }
                return Ok(false);
            }
            let end = end.unwrap_or_else(|| self.target_generation());
            if self.state.generation >= end || !self.state.paused {
                if changed {
                    self.persist()?;
                }
                return Ok(self.state.generation < end);
            }
            if changed {
                self.persist()?;
                changed = false;
            }
            match source.wait(self.state.generation) {
                Some(list) => changed |= self.absorb(list),
                None => return Ok(false),
            }
        }
    }

    fn absorb(&mut self, list: Vec<Intervention>) -> bool {
        let mut changed = false;
        for intervention in list {
            log::info!("applying {intervention:?} at generation {}", self.state.generation);
            match self.apply(intervention.clone()) {
                Ok(()) => changed = true,
                Err(e) => {
                    log::warn!("rejected {intervention:?}: {e}");
                    self.rejected.push(format!("{intervention:?}: {e}"));
                }
            }
        }
        changed
    }

    /// Runs the schedule: phase 1, then phase 2 once a rescheduling
    /// hand-pick has happened.
    pub fn run(&mut self, source: &mut dyn InterventionSource) -> Result<RunReport, EngineError> {
        while self.boundary(source, None)? {
            self.step()?;
        }
        self.finish()
    }

    /// Runs exactly `n` more generations unless stopped or paused.
    pub fn run_generations(&mut self, n: u32, source: &mut dyn InterventionSource) -> Result<RunReport, EngineError> {
        let end = self.state.generation + n;
        while self.boundary(source, Some(end))? {
            self.step()?;
        }
        self.finish()
    }

    fn finish(&mut self) -> Result<RunReport, EngineError> {
        let report = self.report();
        if let Some(dir) = &self.run_dir {
            let mut text = serde_json::to_string_pretty(&report).expect("reports serialize");
            text.push('\n');
            checkpoint::write_atomic(&dir.join(REPORT_FILE), text.as_bytes())?;
        }
        Ok(report)
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            best: self.state.best().cloned(),
            history: self.state.history.clone(),
            generation: self.state.generation,
            phase: self.state.phase,
            paused: self.state.paused,
            stopped: self.state.stopped,
            final_checkpoint: self.last_checkpoint.clone(),
            rejected: self.rejected.clone(),
        }
    }

    /// The `k` best evaluated individuals seen so far.
    pub fn top(&self, k: usize) -> Vec<Individual> {
        top_individuals(&self.state, k)
    }
}

/// The `k` best evaluated individuals of a checkpoint (hall of fame and
/// current population), unique by digest.
pub fn top_individuals(state: &RunCheckpoint, k: usize) -> Vec<Individual> {
    let mut all = state.hall_of_fame.clone();
    merge_hall_of_fame(&mut all, &state.population, usize::MAX);
    all.truncate(k);
    all
}

fn width_policy(state: &RunCheckpoint) -> WidthPolicy {
    if state.phase == 2 {
        WidthPolicy::Schedule(state.config.schedule.clone())
    } else {
        WidthPolicy::Uniform(state.config.uniform_width)
    }
}

fn merge_hall_of_fame(hof: &mut Vec<Individual>, population: &[Individual], cap: usize) {
    for ind in population.iter().filter(|i| i.is_evaluated()) {
        if !hof.iter().any(|h| h.digest == ind.digest) {
            hof.push(ind.clone());
        }
    }
    hof.sort_by(Individual::rank_cmp);
    hof.truncate(cap);
}

fn history_row(state: &RunCheckpoint, evaluated: usize, failures: usize) -> HistoryRow {
    let best = state.population.iter().min_by(|a, b| a.rank_cmp(b)).expect("population is never empty");
    let fits: Vec<f64> = state.population.iter().map(|i| i.fitness.expect("evaluated")).collect();
    let mut sorted = fits.clone();
    sorted.sort_by(f64::total_cmp);
    HistoryRow {
        generation: state.generation + 1,
        phase: state.phase,
        best: best.fitness.expect("evaluated"),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        worst: sorted[0],
        best_digest: best.digest,
        evaluated,
        failures,
    }
}

/// Random phase-1 genomes: depth uniform over `init_depth`, kinds uniform,
/// every width `uniform_width`, stride 1, Invr expansion uniform in {1, 6}.
pub fn random_genome(config: &RunConfig, rng: &mut impl Draw) -> Genome {
    let (lo, hi) = config.init_depth;
    let w = config.uniform_width;
    let depth = rng.between(lo, hi);
    let layers = (0..depth)
        .map(|_| {
            let kind = rng.pick(&BlockKind::ALL);
            let expand = if kind == BlockKind::Invr { rng.pick(&[1, 6]) } else { 1 };
            LayerGene::new(kind, w, w, 1, expand)
        })
        .collect();
    Genome::chained(w, layers).expect("depth is at least 1")
}

fn initial_population(config: &RunConfig, rngs: &mut RngStreams) -> Vec<Individual> {
    let spec = config.compile_spec();
    let rng = rngs.get(Purpose::Init);
    (0..config.population_size)
        .map(|_| {
            let genome = random_genome(config, rng);
            let params = compile(&genome, &spec).map(|n| n.param_count).unwrap_or(0);
            Individual::new(genome, params, 0, Vec::new(), OpTrace::Init)
        })
        .collect()
}
