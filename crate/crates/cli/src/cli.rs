//! Subcommand dispatch.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::thread;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use evocell::bench::{ablation, BenchReport, Variant};
use evocell::compile::compile;
use evocell::engine::{top_individuals, BackendConfig, Mailbox};
use evocell::evaluator::SurrogateSpec;
use evocell::{Engine, EngineError, Intervention, RunConfig, RunReport};

use crate::http::{self, SubmitError};

#[derive(Debug, Parser)]
#[command(name = "evocell", version, about = "Evolutionary search over block-structured CNN genomes")]
pub struct Cli {
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    pub dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a run directory with its initial population.
    Init {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pop: Option<usize>,
        /// Run directory to create (overrides --dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// RunConfig JSON to start from.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evolve for N generations, or to the end of the current phase.
    Run(RunArgs),
    /// Clear a pause and keep evolving.
    Resume(RunArgs),
    /// Show where the run stands.
    Status {
        #[arg(long)]
        json: bool,
    },
    /// List the best individuals seen so far.
    Top {
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        json: bool,
    },
    /// Queue a hand-pick of parents for the next generation.
    Handpick {
        /// Comma-separated digests or unambiguous prefixes.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
        /// Re-initialize per-layer channels and enter phase 2.
        #[arg(long)]
        reschedule: bool,
    },
    /// Queue a pause, resume or stop.
    Control {
        #[arg(value_enum)]
        action: ControlAction,
    },
    /// Print a genome document or its compiled network.
    Export {
        #[arg(long)]
        id: String,
        #[arg(long, value_enum, default_value_t = ExportWhat::Genome)]
        what: ExportWhat,
    },
    /// Serve the HTTP API, optionally evolving alongside.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        /// Also run this many generations, taking interventions from the mailbox.
        #[arg(long)]
        gens: Option<u32>,
    },
    /// Torque-guided versus random-cut crossover on the surrogate.
    Bench {
        #[arg(long, default_value_t = 30)]
        seeds: u64,
        #[arg(long, default_value_t = 25)]
        gens: u32,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub gens: Option<u32>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Plugin command for the external backend, run through `sh -c`.
    #[arg(long)]
    pub plugin: Option<String>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Print the final report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Surrogate,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportWhat {
    Genome,
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControlAction {
    Pause,
    Resume,
    Stop,
}

/// Failure with its exit code: 1 usage, 2 run directory, 3 engine.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    RunDir(String),
    Engine(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::RunDir(_) => 2,
            CliError::Engine(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::RunDir(m) | CliError::Engine(m) => m,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::RunDir(_)
            | EngineError::CorruptCheckpoint(_)
            | EngineError::FormatVersionMismatch { .. }
            | EngineError::CheckpointWrite(_) => CliError::RunDir(e.to_string()),
            EngineError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Engine(e.to_string()),
        }
    }
}

impl From<SubmitError> for CliError {
    fn from(e: SubmitError) -> Self {
        match e {
            SubmitError::RunDir(m) | SubmitError::Io(m) => CliError::RunDir(m),
            SubmitError::Rejected(e) => CliError::Engine(e.to_string()),
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing results to `out`. Returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::RunDir(e.to_string())
}

pub fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = cli.dir;
    match cli.command {
        Command::Init { seed, pop, out: target, config } => {
            let dir = target.unwrap_or(dir);
            let mut cfg = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
                }
                None => RunConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(pop) = pop {
                cfg.population_size = pop;
            }
            let engine = Engine::init(cfg, &dir)?;
            writeln!(
                out,
                "initialized {} with {} genomes (seed {})",
                dir.display(),
                engine.state().population.len(),
                engine.config().seed
            )
            .map_err(io_err)?;
        }
        Command::Run(args) => run(&dir, args, false, out)?,
        Command::Resume(args) => run(&dir, args, true, out)?,
        Command::Status { json } => status(&dir, json, out)?,
        Command::Top { k, json } => top(&dir, k, json, out)?,
        Command::Handpick { ids, reschedule } => {
            let (_, state) = http::snapshot(&dir)?;
            let digests = ids.iter().map(|id| state.resolve(id.trim())).collect::<Result<Vec<_>, _>>()?;
            let n = digests.len();
            let pending = http::submit(&dir, Intervention::HandPick { digests, reschedule_channels: reschedule })?;
            writeln!(out, "queued hand-pick of {n} genome(s){}; {pending} pending", if reschedule { " with rescheduling" } else { "" })
                .map_err(io_err)?;
        }
        Command::Control { action } => {
            let intervention = match action {
                ControlAction::Pause => Intervention::Pause,
                ControlAction::Resume => Intervention::Resume,
                ControlAction::Stop => Intervention::Stop,
            };
            let pending = http::submit(&dir, intervention)?;
            writeln!(out, "queued {action:?}; {pending} pending").map_err(io_err)?;
        }
        Command::Export { id, what } => {
            let (_, state) = http::snapshot(&dir)?;
            let digest = state.resolve(&id)?;
            let ind = state.find(&digest).expect("resolved");
            let text = match what {
                ExportWhat::Genome => ind.genome.to_json_pretty(),
                ExportWhat::Network => {
                    let net = compile(&ind.genome, &state.config.compile_spec()).map_err(|e| CliError::Engine(e.to_string()))?;
                    serde_json::to_string_pretty(&net).expect("networks serialize")
                }
            };
            writeln!(out, "{text}").map_err(io_err)?;
        }
        Command::Serve { port, bind, gens } => serve(&dir, SocketAddr::new(bind, port), gens, out)?,
        Command::Bench { seeds, gens, out: csv_path, json } => bench(seeds, gens, csv_path.as_deref(), json, out)?,
    }
    Ok(())
}

fn open_for_run(dir: &Path, args: &RunArgs) -> Result<Engine, CliError> {
    let mut engine = Engine::open(dir)?;
    match (args.backend, &args.plugin) {
        (Some(BackendKind::External), None) => {
            return Err(CliError::Usage("--backend external needs --plugin <cmd>".into()));
        }
        (Some(BackendKind::External), Some(cmd)) | (None, Some(cmd)) => {
            let grace_s = match &engine.config().backend {
                BackendConfig::External { grace_s, .. } => *grace_s,
                _ => evocell::evaluator::plugin::DEFAULT_GRACE.as_secs_f64(),
            };
            engine.set_backend(BackendConfig::External { command: cmd.clone(), grace_s });
        }
        (Some(BackendKind::Surrogate), _) => {
            if !matches!(engine.config().backend, BackendConfig::Surrogate(_)) {
                engine.set_backend(BackendConfig::Surrogate(SurrogateSpec::default()));
            }
        }
        (None, None) => {}
    }
    if let Some(p) = args.parallelism {
        if p == 0 {
            return Err(CliError::Usage("--parallelism must be at least 1".into()));
        }
        engine.set_parallelism(p);
    }
    Ok(engine)
}

fn run(dir: &Path, args: RunArgs, resume: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let mut engine = open_for_run(dir, &args)?;
    if resume && engine.state().paused {
        engine.apply(Intervention::Resume)?;
        engine.persist()?;
    }
    let mut mailbox = Mailbox::new(dir);
    let report = match args.gens {
        Some(n) => engine.run_generations(n, &mut mailbox)?,
        None => engine.run(&mut mailbox)?,
    };
    print_report(&report, args.json, out)
}

fn print_report(report: &RunReport, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(report).expect("reports serialize")).map_err(io_err)?;
        return Ok(());
    }
    let state = if report.stopped {
        "stopped"
    } else if report.paused {
        "paused"
    } else {
        "idle"
    };
    writeln!(out, "generation {} (phase {}), {state}, {} history rows", report.generation, report.phase, report.history.len())
        .map_err(io_err)?;
    if let Some(best) = &report.best {
        writeln!(out, "best {} fitness {:.4} params {}", best.digest.short(12), best.fitness.unwrap_or(0.0), best.params)
            .map_err(io_err)?;
    }
    for r in &report.rejected {
        writeln!(out, "rejected: {r}").map_err(io_err)?;
    }
    Ok(())
}

fn status(dir: &Path, as_json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let (latest, s) = http::snapshot(dir)?;
    let pending = Mailbox::new(dir).peek().map_err(io_err)?;
    if as_json {
        let doc = json!({
            "generation": s.generation,
            "phase": s.phase,
            "paused": s.paused,
            "stopped": s.stopped,
            "phase2_start": s.phase2_start,
            "latest_checkpoint": latest,
            "population_size": s.population.len(),
            "history_rows": s.history.len(),
            "best": s.best(),
            "pending": pending,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("json")).map_err(io_err)?;
        return Ok(());
    }
    let state = if s.stopped {
        "stopped"
    } else if s.paused {
        "paused"
    } else {
        "ready"
    };
    writeln!(out, "run:        {}", dir.display()).map_err(io_err)?;
    writeln!(out, "generation: {} (phase {}), {state}", s.generation, s.phase).map_err(io_err)?;
    writeln!(out, "population: {}", s.population.len()).map_err(io_err)?;
    if let Some(last) = s.history.last() {
        writeln!(out, "last row:   best {:.4} mean {:.4} worst {:.4}", last.best, last.mean, last.worst).map_err(io_err)?;
    }
    if let Some(best) = s.best() {
        writeln!(out, "best:       {} fitness {:.4} depth {}", best.digest.short(12), best.fitness.unwrap_or(0.0), best.genome.len())
            .map_err(io_err)?;
    }
    writeln!(out, "pending:    {}", pending.len()).map_err(io_err)?;
    Ok(())
}

fn top(dir: &Path, k: usize, as_json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let (_, s) = http::snapshot(dir)?;
    let best = top_individuals(&s, k);
    if as_json {
        let rows: Vec<_> = best
            .iter()
            .enumerate()
            .map(|(i, ind)| {
                json!({
                    "rank": i + 1,
                    "digest": ind.digest,
                    "fitness": ind.fitness,
                    "params": ind.params,
                    "depth": ind.genome.len(),
                    "kinds": ind.genome.kinds().map(|k| k.as_str()).collect::<Vec<_>>(),
                    "born_gen": ind.born_gen,
                    "op_trace": ind.op_trace,
                })
            })
            .collect();
        writeln!(out, "{}", serde_json::to_string_pretty(&rows).expect("json")).map_err(io_err)?;
        return Ok(());
    }
    writeln!(out, "{:>4}  {:<16}  {:>7}  {:>10}  blocks", "rank", "digest", "fitness", "params").map_err(io_err)?;
    for (i, ind) in best.iter().enumerate() {
        let kinds: Vec<&str> = ind.genome.kinds().map(|k| k.as_str()).collect();
        writeln!(
            out,
            "{:>4}  {:<16}  {:>7.4}  {:>10}  {}",
            i + 1,
            ind.digest.short(16),
            ind.fitness.unwrap_or(0.0),
            ind.params,
            kinds.join(" ")
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn serve(dir: &Path, addr: SocketAddr, gens: Option<u32>, out: &mut dyn Write) -> Result<(), CliError> {
    Engine::open(dir)?;
    let worker = gens.map(|n| {
        let dir = dir.to_path_buf();
        thread::spawn(move || -> Result<RunReport, EngineError> {
            let mut engine = Engine::open(&dir)?;
            engine.run_generations(n, &mut Mailbox::new(&dir))
        })
    });
    let served = http::serve_blocking(dir.to_path_buf(), addr, |bound| {
        let _ = writeln!(out, "listening on http://{bound}");
        let _ = out.flush();
    });
    served.map_err(|e| CliError::RunDir(format!("cannot serve on {addr}: {e}")))?;
    if let Some(w) = worker {
        w.join().map_err(|_| CliError::Engine("engine thread panicked".into()))??;
    }
    Ok(())
}

/// CSV columns: seed, variant, best_fitness, planted_pairs, best_depth,
/// evaluations.
pub fn write_bench_csv(report: &BenchReport, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::RunDir(format!("{}: {e}", path.display())))?;
    w.write_record(["seed", "variant", "best_fitness", "planted_pairs", "best_depth", "evaluations"])
        .map_err(|e| CliError::RunDir(e.to_string()))?;
    for r in &report.rows {
        w.write_record([
            r.seed.to_string(),
            r.variant.as_str().to_string(),
            r.best_fitness.to_string(),
            r.planted_pairs.to_string(),
            r.best_depth.to_string(),
            r.evaluations.to_string(),
        ])
        .map_err(|e| CliError::RunDir(e.to_string()))?;
    }
    w.flush().map_err(io_err)
}

fn bench(seeds: u64, gens: u32, csv_path: Option<&Path>, as_json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    if seeds == 0 || gens == 0 {
        return Err(CliError::Usage("--seeds and --gens must be positive".into()));
    }
    let report = ablation(&RunConfig::default(), seeds, gens)?;
    if let Some(path) = csv_path {
        write_bench_csv(&report, path)?;
    }
    if as_json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("json")).map_err(io_err)?;
        return Ok(());
    }
    writeln!(out, "{seeds} seeds x {gens} generations").map_err(io_err)?;
    writeln!(out, "{:<14} {:>9} {:>9} {:>10}", "variant", "mean", "median", ">=3 pairs").map_err(io_err)?;
    for v in [Variant::Guided, Variant::Unguided, Variant::RandomSearch] {
        let s = report.summary(v).expect("all variants summarized");
        writeln!(out, "{:<14} {:>9.4} {:>9.4} {:>9.0}%", v.as_str(), s.mean_best, s.median_best, 100.0 * s.planted3_fraction)
            .map_err(io_err)?;
    }
    writeln!(out, "guided vs unguided: {} wins, {} ties, {} losses", report.guided_wins, report.ties, report.guided_losses)
        .map_err(io_err)?;
    Ok(())
}
