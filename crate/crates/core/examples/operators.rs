//! Guided crossover and mutation on two parents sharing a high-torque set.
//!
//! ```bash
//! cargo run -p evocell --example operators
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use evocell::operators::{crossover, mutate, OperatorConfig, WidthPolicy};
use evocell::{BlockKind, ControlTables, Genome, LayerGene};

fn genome(kinds: &[BlockKind]) -> Genome {
    Genome::chained(32, kinds.iter().map(|&k| LayerGene::new(k, 0, 32, 1, 6)).collect()).unwrap()
}

fn show(label: &str, g: &Genome) {
    println!("{label:<13} {}", g.kinds().map(|k| k.as_str()).collect::<Vec<_>>().join(" "));
}

fn main() {
    use BlockKind::*;
    let a = genome(&[Res, Invr, Invr, CrLU, Bot]);
    let b = genome(&[CrLU, CrLU, Invr, Invr, Res]);
    let mut tables = ControlTables::new();
    tables.update([(&a, 0.8), (&b, 0.6), (&genome(&[CrLU, CrLU]), 0.2)]);

    let cfg = OperatorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    show("parent a", &a);
    show("parent b", &b);
    for _ in 0..3 {
        let out = crossover(&a, &b, &tables, &cfg, &mut rng);
        println!("{:?} cuts {:?}", out.branch, out.cuts);
        show("child 1", &out.children.0);
        show("child 2", &out.children.1);
    }
    let mut g = a.clone();
    for _ in 0..5 {
        let (next, action) = mutate(&g, &tables, &cfg, &mut rng, &WidthPolicy::Uniform(32));
        g = next;
        show(&format!("{action:?}"), &g);
    }
}
