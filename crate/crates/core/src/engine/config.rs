use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::compile::{ChannelSchedule, CompileSpec};
use crate::evaluator::{Backend, EvalBudget, ExternalBackend, SurrogateBackend, SurrogateSpec};
use crate::operators::OperatorConfig;

/// Which evaluator scores the population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Surrogate(SurrogateSpec),
    External {
        command: String,
        #[serde(default = "default_grace")]
        grace_s: f64,
    },
}

fn default_grace() -> f64 {
    crate::evaluator::plugin::DEFAULT_GRACE.as_secs_f64()
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Surrogate(SurrogateSpec::default())
    }
}

impl BackendConfig {
    pub fn build(&self) -> Box<dyn Backend> {
        match self {
            BackendConfig::Surrogate(spec) => Box::new(SurrogateBackend::new(spec.clone())),
            BackendConfig::External { command, grace_s } => {
                Box::new(ExternalBackend::with_grace(command.clone(), Duration::from_secs_f64(grace_s.max(0.0))))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub population_size: usize,
    pub phase1_generations: u32,
    pub phase2_generations: u32,
    pub elitism: usize,
    /// Defaults to `max(1, population_size / 2)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub survivors_k: Option<usize>,
    pub operators: OperatorConfig,
    /// Output width of every gene during phase 1.
    pub uniform_width: u32,
    pub schedule: ChannelSchedule,
    pub backend: BackendConfig,
    pub budget: EvalBudget,
    pub seed: u64,
    pub num_classes: u32,
    pub head_widths: Vec<u32>,
    pub input_size: (u32, u32),
    /// Inclusive depth range of the initial genomes.
    pub init_depth: (usize, usize),
    pub parallelism: usize,
    pub reset_tables_on_phase2: bool,
    /// Length of the all-time top list kept in checkpoints.
    pub hall_of_fame_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let compile = CompileSpec::default();
        RunConfig {
            population_size: 12,
            phase1_generations: 15,
            phase2_generations: 10,
            elitism: 1,
            survivors_k: None,
            operators: OperatorConfig::default(),
            uniform_width: 32,
            schedule: ChannelSchedule::default(),
            backend: BackendConfig::default(),
            budget: EvalBudget::default(),
            seed: 0,
            num_classes: compile.num_classes,
            head_widths: compile.head_widths,
            input_size: compile.input_size,
            init_depth: (3, 9),
            parallelism: 1,
            reset_tables_on_phase2: false,
            hall_of_fame_size: 32,
        }
    }
}

impl RunConfig {
    pub fn survivors(&self) -> usize {
        self.survivors_k.unwrap_or((self.population_size / 2).max(1))
    }

    pub fn compile_spec(&self) -> CompileSpec {
        CompileSpec { head_widths: self.head_widths.clone(), num_classes: self.num_classes, input_size: self.input_size }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.operators.validate().map_err(|e| e.to_string())?;
        let k = self.survivors();
        if self.population_size == 0 {
            return Err("population_size must be at least 1".into());
        }
        if k == 0 || k > self.population_size {
            return Err(format!("survivors_k = {k} must lie in 1..={}", self.population_size));
        }
        if self.elitism > k {
            return Err(format!("elitism = {} exceeds survivors_k = {k}", self.elitism));
        }
        let (lo, hi) = self.init_depth;
        if lo == 0 || lo > hi || hi > self.operators.max_depth {
            return Err(format!("init_depth ({lo}, {hi}) must satisfy 1 <= lo <= hi <= {}", self.operators.max_depth));
        }
        if self.uniform_width == 0 {
            return Err("uniform_width must be positive".into());
        }
        if self.parallelism == 0 {
            return Err("parallelism must be at least 1".into());
        }
        if self.num_classes < 2 {
            return Err("num_classes must be at least 2".into());
        }
        if self.budget.epochs == 0 || self.budget.time_limit <= 0.0 || self.budget.max_params == 0 {
            return Err("budget fields must be positive".into());
        }
        if let BackendConfig::Surrogate(spec) = &self.backend {
            if spec.base + spec.pair_weight > 1.0 || spec.noise_sigma < 0.0 {
                return Err("surrogate needs base + pair_weight <= 1 and noise_sigma >= 0".into());
            }
        }
        Ok(())
    }
}
