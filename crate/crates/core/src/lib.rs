//! Deterministic evolutionary architecture search over chain-structured
//! convolutional genomes.
//!
//! The search space holds four block kinds (inverted residual, residual,
//! bottleneck and a basic 2x2 convolution). Two learned control variables
//! steer the operators: per-kind *presence ratios* pick which block kind a
//! mutation adds or removes, and per-pair *set torques* pick where crossover
//! cuts its parents.
//!
//! * [`genome`]: encoding, validation, digests, serialization.
//! * [`compile`]: genome to network description with exact parameter and
//!   multiply-add counts.
//! * [`control`]: presence and torque tables.
//! * [`operators`]: crossover, mutation, selection, offspring generation.
//! * [`evaluator`]: surrogate landscape, external plugin protocol, result
//!   cache.
//! * [`engine`]: the generation loop, interventions and checkpoints.
//! * [`bench`]: guided versus unguided ablation and a random-search
//!   baseline.
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod bench;
pub mod compile;
pub mod control;
pub mod engine;
pub mod evaluator;
pub mod genome;
pub mod individual;
pub mod operators;
pub mod rng;

pub use compile::{compile, ChannelSchedule, CompileSpec, NetworkDescription};
pub use control::{ControlTables, SetKey};
pub use engine::{Engine, EngineError, Intervention, RunCheckpoint, RunConfig, RunReport};
pub use genome::{BlockKind, Genome, GenomeDigest, GenomeError, LayerGene};
pub use individual::{Individual, OpTrace};
