//! JSON state and control API over a run directory.
//!
//! | method | path                    | body                                   |
//! |--------|-------------------------|----------------------------------------|
//! | GET    | `/api/run`              | generation, phase, paused, best, history |
//! | GET    | `/api/generations/<n>`  | the `gen_<n>.json` checkpoint          |
//! | GET    | `/api/genomes/<digest>` | genome, compiled summary, contributions |
//! | GET    | `/api/tables`           | presence means and the 4x4 torque grid |
//! | POST   | `/api/control`          | an intervention; answered with 202     |
//!
//! Reads never touch the directory. Control requests only append to
//! `control.mailbox`, which the engine drains between generations.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use axum::body::Bytes;
use axum::http::{Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use serde_json::{json, Value};

use evocell::compile::compile;
use evocell::control::{presence_ratios, set_torques};
use evocell::engine::{checkpoint_name, latest_checkpoint, Mailbox};
use evocell::{BlockKind, Engine, EngineError, Intervention, RunCheckpoint};

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(body: Value) -> Self {
        ApiResponse { status: 200, body }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        ApiResponse { status, body: json!({ "error": message.into() }) }
    }
}

/// Why an intervention was refused.
#[derive(Debug, Clone, PartialEq)]
pub enum SubmitError {
    /// No readable run in the directory.
    RunDir(String),
    /// The intervention conflicts with the run state.
    Rejected(EngineError),
    Io(String),
}

impl std::fmt::Display for SubmitError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubmitError::RunDir(m) | SubmitError::Io(m) => f.write_str(m),
            SubmitError::Rejected(e) => write!(f, "{e}"),
        }
    }
}

/// Latest checkpoint of `run_dir`.
pub fn snapshot(run_dir: &Path) -> Result<(u32, RunCheckpoint), SubmitError> {
    let (n, path) = latest_checkpoint(run_dir)
        .map_err(|e| SubmitError::RunDir(e.to_string()))?
        .ok_or_else(|| SubmitError::RunDir(format!("no checkpoints in {}", run_dir.display())))?;
    let ck = RunCheckpoint::load(&path).map_err(|e| SubmitError::RunDir(e.to_string()))?;
    Ok((n, ck))
}

/// Validates `intervention` against the latest checkpoint plus anything
/// already waiting in the mailbox, then queues it. Shared by the CLI and
/// HTTP paths. Returns the number of pending interventions.
pub fn submit(run_dir: &Path, intervention: Intervention) -> Result<usize, SubmitError> {
    let (_, state) = snapshot(run_dir)?;
    let mailbox = Mailbox::new(run_dir);
    let pending = mailbox.peek().map_err(|e| SubmitError::Io(e.to_string()))?;
    Engine::check(&state, &intervention).map_err(SubmitError::Rejected)?;
    let rescheduling = |i: &Intervention| matches!(i, Intervention::HandPick { reschedule_channels: true, .. });
    if rescheduling(&intervention) && pending.iter().any(rescheduling) {
        return Err(SubmitError::Rejected(EngineError::InvalidPhaseTransition(
            "a rescheduling hand-pick is already pending".into(),
        )));
    }
    mailbox.post(intervention).map_err(|e| SubmitError::Io(e.to_string()))?;
    Ok(pending.len() + 1)
}

fn write_in_flight(run_dir: &Path) -> bool {
    fs::read_dir(run_dir)
        .map(|entries| entries.flatten().any(|e| e.file_name().to_string_lossy().ends_with(".tmp")))
        .unwrap_or(false)
}

/// Serves one request against `run_dir`.
pub fn handle(method: &str, path: &str, body: &[u8], run_dir: &Path) -> ApiResponse {
    let path = path.split('?').next().unwrap_or("").trim_end_matches('/');
    let segments: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
    let known = matches!(
        segments.as_slice(),
        ["api", "run"] | ["api", "tables"] | ["api", "control"] | ["api", "generations", _] | ["api", "genomes", _]
    );
    if !known {
        return ApiResponse::error(404, format!("no such endpoint `{path}`"));
    }
    let expected = if segments == ["api", "control"] { "POST" } else { "GET" };
    if method != expected {
        return ApiResponse::error(405, format!("{path} only accepts {expected}"));
    }
    if write_in_flight(run_dir) {
        return ApiResponse::error(503, "a checkpoint write is in flight; retry shortly");
    }
    let (latest, state) = match snapshot(run_dir) {
        Ok(s) => s,
        Err(e) => return ApiResponse::error(503, e.to_string()),
    };
    match segments.as_slice() {
        ["api", "run"] => run_view(run_dir, latest, &state),
        ["api", "tables"] => ApiResponse::ok(tables_view(&state)),
        ["api", "generations", n] => generation_view(run_dir, n),
        ["api", "genomes", id] => genome_view(&state, id),
        ["api", "control"] => control(run_dir, body),
        _ => unreachable!("filtered above"),
    }
}

fn run_view(run_dir: &Path, latest: u32, s: &RunCheckpoint) -> ApiResponse {
    let pending = Mailbox::new(run_dir).peek().unwrap_or_default();
    ApiResponse::ok(json!({
        "generation": s.generation,
        "phase": s.phase,
        "paused": s.paused,
        "stopped": s.stopped,
        "phase2_start": s.phase2_start,
        "latest_checkpoint": latest,
        "population_size": s.population.len(),
        "best": s.best(),
        "history": s.history,
        "hall_of_fame": s.hall_of_fame,
        "pending": pending,
    }))
}

pub fn tables_view(s: &RunCheckpoint) -> Value {
    let presence: serde_json::Map<String, Value> =
        BlockKind::ALL.iter().map(|k| (k.as_str().to_string(), json!(s.tables.presence_mean(*k)))).collect();
    json!({
        "kinds": BlockKind::ALL.iter().map(|k| k.as_str()).collect::<Vec<_>>(),
        "presence": presence,
        "torque": s.tables.torque_matrix(),
        "tables": s.tables,
    })
}

fn generation_view(run_dir: &Path, n: &str) -> ApiResponse {
    let Ok(n) = n.parse::<u32>() else {
        return ApiResponse::error(404, format!("`{n}` is not a generation number"));
    };
    let path = run_dir.join(checkpoint_name(n));
    match fs::read_to_string(&path) {
        Ok(text) => match serde_json::from_str(&text) {
            Ok(doc) => ApiResponse::ok(doc),
            Err(e) => ApiResponse::error(500, format!("{}: {e}", path.display())),
        },
        Err(_) => ApiResponse::error(404, format!("no checkpoint for generation {n}")),
    }
}

/// Genome document, compiled summary, and the presence and torque values this
/// genome contributes at its fitness.
pub fn genome_detail(s: &RunCheckpoint, id: &str) -> Result<Value, EngineError> {
    let digest = s.resolve(id)?;
    let ind = s.find(&digest).expect("resolved digests exist");
    let accuracy = ind.fitness.unwrap_or(0.0);
    let summary = compile(&ind.genome, &s.config.compile_spec()).ok().map(|n| n.summary());
    Ok(json!({
        "digest": ind.digest,
        "genome": ind.genome,
        "fitness": ind.fitness,
        "params": ind.params,
        "born_gen": ind.born_gen,
        "op_trace": ind.op_trace,
        "parent_digests": ind.parent_digests,
        "flag": ind.flag,
        "summary": summary,
        "presence": presence_ratios(&ind.genome, accuracy),
        "torque": set_torques(&ind.genome, accuracy),
    }))
}

fn genome_view(s: &RunCheckpoint, id: &str) -> ApiResponse {
    match genome_detail(s, id) {
        Ok(v) => ApiResponse::ok(v),
        Err(e) => ApiResponse::error(404, e.to_string()),
    }
}

fn control(run_dir: &Path, body: &[u8]) -> ApiResponse {
    let intervention: Intervention = match serde_json::from_slice(body) {
        Ok(i) => i,
        Err(e) => return ApiResponse::error(400, format!("bad intervention document: {e}")),
    };
    match submit(run_dir, intervention.clone()) {
        Ok(pending) => ApiResponse { status: 202, body: json!({ "accepted": intervention, "pending": pending }) },
        Err(SubmitError::Rejected(e)) => ApiResponse::error(409, e.to_string()),
        Err(SubmitError::RunDir(m)) => ApiResponse::error(503, m),
        Err(SubmitError::Io(m)) => ApiResponse::error(500, m),
    }
}

/// Axum router delegating every request to [`handle`].
pub fn router(run_dir: PathBuf) -> Router {
    Router::new().fallback(move |method: Method, uri: Uri, body: Bytes| {
        let dir = run_dir.clone();
        async move {
            let path = uri.path().to_string();
            let r = tokio::task::spawn_blocking(move || handle(method.as_str(), &path, &body, &dir))
                .await
                .unwrap_or_else(|e| ApiResponse::error(500, e.to_string()));
            into_response(r)
        }
    })
}

fn into_response(r: ApiResponse) -> Response {
    let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [("content-type", "application/json")], r.body.to_string()).into_response()
}

/// Binds `addr` and serves until the process exits. `on_bound` receives
/// the actual address (useful with port 0).
pub fn serve_blocking(run_dir: PathBuf, addr: SocketAddr, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_bound(listener.local_addr()?);
        axum::serve(listener, router(run_dir)).await
    })
}
