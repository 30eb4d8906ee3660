//! Query a run directory through the HTTP handlers without binding a socket,
//! then queue a hand-pick the same way a browser client would.
//!
//! ```bash
//! cargo run -p evocell-cli --example http_api
//! ```

use serde_json::json;

use evocell::engine::NoInterventions;
use evocell::{Engine, RunConfig};
use evocell_cli::http::handle;

fn main() {
    let dir = std::env::temp_dir().join(format!("evocell-http-{}", std::process::id()));
    Engine::init(RunConfig { seed: 9, ..Default::default() }, &dir).unwrap().run_generations(5, &mut NoInterventions).unwrap();

    let run = handle("GET", "/api/run", b"", &dir);
    println!("GET /api/run -> {}: generation {}, phase {}", run.status, run.body["generation"], run.body["phase"]);
    let best = run.body["best"]["digest"].as_str().unwrap().to_string();

    let detail = handle("GET", &format!("/api/genomes/{}", &best[..10]), b"", &dir);
    println!("GET /api/genomes/{} -> {}: {}", &best[..10], detail.status, detail.body["summary"]);

    let tables = handle("GET", "/api/tables", b"", &dir);
    println!("GET /api/tables -> {}: torque {}", tables.status, tables.body["torque"]);

    let body = json!({"type": "HandPick", "digests": [best], "reschedule_channels": true}).to_string();
    let posted = handle("POST", "/api/control", body.as_bytes(), &dir);
    println!("POST /api/control -> {}: {}", posted.status, posted.body);
    let again = handle("POST", "/api/control", body.as_bytes(), &dir);
    println!("POST /api/control again -> {}: {}", again.status, again.body);
    std::fs::remove_dir_all(&dir).unwrap();
}
