//! Build a genome, serialize it, and read it back with channel repair.
//!
//! ```bash
//! cargo run -p evocell --example encode_genome
//! ```

use evocell::genome::DEFAULT_MAX_DEPTH;
use evocell::{BlockKind, Genome, LayerGene};

fn main() {
    let genome = Genome::chained(
        32,
        vec![
            LayerGene::invr(0, 32, 1, 6),
            LayerGene::invr(0, 32, 2, 6),
            LayerGene::plain(BlockKind::Res, 0, 64),
            LayerGene::plain(BlockKind::Bot, 0, 64),
        ],
    )
    .unwrap();
    println!("{}", genome.to_json_pretty());
    println!("digest {}", genome.digest());

    // invr fields left out, and a stride on a gene that cannot carry one
    let sparse = r#"{"stem_out":32,"layers":[
        {"kind":"Invr","in":32,"out":48},
        {"kind":"Res","in":48,"out":48,"stride":2}]}"#;
    let (parsed, report) = Genome::parse(sparse, DEFAULT_MAX_DEPTH).unwrap();
    println!("defaulted {:?}", report.defaulted);
    println!("normalized {:?}", report.normalized);
    println!("{parsed}");

    let broken = Genome::new(16, vec![LayerGene::plain(BlockKind::Bot, 3, 64), LayerGene::plain(BlockKind::CrLU, 7, 32)]);
    println!("before repair: {:?}", broken.validate(DEFAULT_MAX_DEPTH).err());
    let repaired = broken.repair_channels().unwrap();
    println!("after repair:  {repaired}");
    println!("digest {}", repaired.digest());
}
