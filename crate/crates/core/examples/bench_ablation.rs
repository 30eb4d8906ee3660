//! Guided operators against unguided ones and a random-search baseline with
//! the same evaluation budget.
//!
//! ```bash
//! cargo run --release -p evocell --example bench_ablation -- 10
//! ```

use evocell::bench::{ablation, Variant};
use evocell::RunConfig;

fn main() {
    let seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let report = ablation(&RunConfig::default(), seeds, 25).unwrap();
    for v in [Variant::Guided, Variant::Unguided, Variant::RandomSearch] {
        let s = report.summary(v).unwrap();
        println!(
            "{:<13} runs {:>3}  mean {:.4}  median {:.4}  planted>=3 {:.2}",
            v.as_str(),
            s.runs,
            s.mean_best,
            s.median_best,
            s.planted3_fraction
        );
    }
    println!("guided vs unguided: {} wins, {} ties, {} losses", report.guided_wins, report.ties, report.guided_losses);
}
