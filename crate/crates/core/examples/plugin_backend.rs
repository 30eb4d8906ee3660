//! An evaluator plugin written in Rust, and an engine run that uses it.
//!
//! Started with `--serve-plugin` the binary speaks the line protocol on
//! stdin/stdout and scores genomes with the surrogate. Without arguments it
//! launches a short run that spawns itself as the plugin.
//!
//! ```bash
//! cargo run -p evocell --example plugin_backend
//! ```

use std::io::{self, BufRead, Write};

use serde_json::{json, Value};

use evocell::engine::{BackendConfig, NoInterventions};
use evocell::evaluator::{surrogate_accuracy, SurrogateSpec};
use evocell::{Engine, Genome, NetworkDescription, RunConfig};

fn serve() -> io::Result<()> {
    let spec = SurrogateSpec::default();
    let mut out = io::stdout().lock();
    for line in io::stdin().lock().lines() {
        let msg: Value = match serde_json::from_str(&line?) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let reply = match msg["type"].as_str() {
            Some("hello") => json!({"type": "hello", "protocol": 1, "name": "rust-surrogate"}),
            Some("eval") => {
                let id = msg["id"].as_u64().unwrap_or(0);
                let genome: Result<Genome, _> = serde_json::from_value(msg["genome"].clone());
                let network: Result<NetworkDescription, _> = serde_json::from_value(msg["network"].clone());
                match (genome, network) {
                    (Ok(g), Ok(n)) => json!({
                        "type": "result",
                        "id": id,
                        "accuracy": surrogate_accuracy(&g, &spec),
                        "params": n.param_count,
                        "notes": format!("{} blocks", g.len()),
                    }),
                    _ => json!({"type": "error", "id": id, "message": "unreadable genome"}),
                }
            }
            Some("shutdown") => break,
            _ => continue,
        };
        writeln!(out, "{reply}")?;
        out.flush()?;
    }
    Ok(())
}

fn main() {
    if std::env::args().any(|a| a == "--serve-plugin") {
        serve().unwrap();
        return;
    }
    let exe = std::env::current_exe().unwrap();
    let config = RunConfig {
        seed: 4,
        phase1_generations: 5,
        parallelism: 4,
        backend: BackendConfig::External { command: format!("'{}' --serve-plugin", exe.display()), grace_s: 10.0 },
        ..Default::default()
    };
    let mut engine = Engine::new(config).unwrap();
    let report = engine.run(&mut NoInterventions).unwrap();
    for row in &report.history {
        println!("gen {} best {:.4} failures {}", row.generation, row.best, row.failures);
    }
}
