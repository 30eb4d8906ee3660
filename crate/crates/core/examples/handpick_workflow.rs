//! Fifteen generations at uniform width, a hand-pick of the top four with the
//! channel schedule applied, then ten more generations.
//!
//! ```bash
//! cargo run -p evocell --example handpick_workflow -- /tmp/evocell-run
//! ```

use evocell::engine::Scripted;
use evocell::{Engine, GenomeDigest, Intervention, RunConfig};

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "handpick-run".into());
    let mut engine = Engine::init(RunConfig { seed: 3, ..Default::default() }, &dir).unwrap();
    engine.run(&mut Scripted::default()).unwrap();

    let picks: Vec<GenomeDigest> = engine.top(4).iter().map(|i| i.digest).collect();
    for ind in engine.top(4) {
        println!("pick {} {:.4} {}", ind.digest.short(10), ind.fitness.unwrap(), ind.genome);
    }
    let mut script = Scripted::default().at(15, Intervention::HandPick { digests: picks, reschedule_channels: true });
    let report = engine.run(&mut script).unwrap();

    for row in &report.history {
        println!("gen {:>2} phase {} best {:.4}", row.generation, row.phase, row.best);
    }
    let best = report.best.unwrap();
    println!("final best {}", best.genome);
    println!("checkpoints in {dir}, last {}", report.final_checkpoint.unwrap().display());
}
