//! Feed a few scored genomes into the presence and set-torque tables.
//!
//! ```bash
//! cargo run -p evocell --example control_tables
//! ```

use evocell::control::{presence_ratios, set_torques};
use evocell::{BlockKind, ControlTables, Genome, LayerGene};

fn genome(kinds: &[BlockKind]) -> Genome {
    Genome::chained(32, kinds.iter().map(|&k| LayerGene::new(k, 0, 32, 1, 6)).collect()).unwrap()
}

fn main() {
    use BlockKind::*;
    let batch = [
        (genome(&[Invr, Invr, Bot]), 0.9),
        (genome(&[Res, CrLU, Res]), 0.4),
        (genome(&[Invr, Res, Invr, Invr]), 0.7),
    ];
    let (g, acc) = &batch[0];
    println!("presence of the first genome {:?}", presence_ratios(g, *acc));
    println!("torques of the first genome {:?}", set_torques(g, *acc));

    let mut tables = ControlTables::new();
    tables.update(batch.iter().map(|(g, a)| (g, *a)));
    for k in BlockKind::ALL {
        println!("P[{k}] = {:.4}", tables.presence_mean(k));
    }
    println!("set torque matrix (rows and columns in {:?} order)", BlockKind::ALL);
    for row in tables.torque_matrix() {
        println!("  {}", row.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "));
    }
    println!("best kind {:?}, worst kind {:?}", tables.argmax_presence(), tables.argmin_presence());
}
