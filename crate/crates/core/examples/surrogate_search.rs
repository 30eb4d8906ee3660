//! Evolve against the synthetic surrogate and print the fitness curve.
//!
//! ```bash
//! cargo run -p evocell --example surrogate_search -- 42
//! ```

use evocell::engine::NoInterventions;
use evocell::{Engine, RunConfig};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = RunConfig { seed, phase1_generations: 25, ..Default::default() };
    let mut engine = Engine::new(config).unwrap();
    let report = engine.run(&mut NoInterventions).unwrap();
    for row in &report.history {
        println!("gen {:>2}  best {:.4}  mean {:.4}  worst {:.4}", row.generation, row.best, row.mean, row.worst);
    }
    let best = report.best.unwrap();
    println!("best {} fitness {:.4}", best.digest.short(12), best.fitness.unwrap());
    println!("{}", best.genome.kinds().map(|k| k.as_str()).collect::<Vec<_>>().join(" "));
}
