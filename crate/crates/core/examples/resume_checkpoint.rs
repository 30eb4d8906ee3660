//! Stop a run part way, reopen it from its directory, and confirm the result
//! matches an uninterrupted run byte for byte.
//!
//! ```bash
//! cargo run -p evocell --example resume_checkpoint
//! ```

use std::fs;

use evocell::engine::{checkpoint_name, NoInterventions};
use evocell::{Engine, RunConfig};

fn main() {
    let root = std::env::temp_dir().join(format!("evocell-resume-{}", std::process::id()));
    let config = RunConfig { seed: 11, ..Default::default() };

    let straight = root.join("straight");
    Engine::init(config.clone(), &straight).unwrap().run(&mut NoInterventions).unwrap();

    let split = root.join("split");
    Engine::init(config, &split).unwrap().run_generations(6, &mut NoInterventions).unwrap();
    let mut reopened = Engine::open(&split).unwrap();
    println!("reopened at generation {}", reopened.generation());
    reopened.run(&mut NoInterventions).unwrap();

    let last = checkpoint_name(15);
    let same = fs::read(straight.join(&last)).unwrap() == fs::read(split.join(&last)).unwrap();
    println!("{last} identical: {same}");
    fs::remove_dir_all(&root).unwrap();
}
