//! Compile the seven-block reference genome and print its layer table.
//!
//! ```bash
//! cargo run -p evocell --example compile_reference
//! ```

use evocell::compile::{compile, CompileSpec, Skip};
use evocell::genome::reference_genome;

fn main() {
    let genome = reference_genome();
    let net = compile(&genome, &CompileSpec::default()).unwrap();
    println!("{:<6} {:>5} {:>5} {:>3} {:>10}  skip", "kind", "in", "out", "t", "params");
    for b in &net.blocks {
        let skip = match b.skip {
            Skip::None => "none",
            Skip::Identity => "identity",
            Skip::Projection(_) => "projection",
        };
        println!("{:<6} {:>5} {:>5} {:>3} {:>10}  {skip}", b.kind, b.in_ch, b.out_ch, b.expand, b.params);
    }
    for p in net.linear_layers() {
        println!("linear {:?}", p);
    }
    let s = net.summary();
    println!("blocks {} linear {} params {} macs {}", s.blocks, s.linear_layers, s.params, s.macs);
}
