//! External evaluator plugins over newline-delimited JSON on stdin/stdout.
//!
//! ```text
//! engine -> plugin  {"type":"hello","protocol":1}
//! plugin -> engine  {"type":"hello","protocol":1,"name":"<plugin>"}
//! engine -> plugin  {"type":"eval","id":1,"genome":{..},"network":{..},"budget":{..}}
//! plugin -> engine  {"type":"result","id":1,"accuracy":0.61,"params":123,"notes":""}
//!                   {"type":"error","id":1,"message":"..."}
//! engine -> plugin  {"type":"shutdown"}
//! ```
//!
//! Responses are matched by id and may arrive in any order. Unknown fields
//! are ignored.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, EvalBudget, EvalError, EvalJob, Score, Source};
use crate::compile::NetworkDescription;
use crate::genome::Genome;

pub const PROTOCOL_VERSION: u32 = 1;

/// Extra time granted beyond `budget.time_limit` before a request times out.
pub const DEFAULT_GRACE: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EngineMessage<'a> {
    Hello { protocol: u32 },
    Eval { id: u64, genome: &'a Genome, network: &'a NetworkDescription, budget: WireBudget },
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireBudget {
    pub epochs: u32,
    pub time_s: f64,
    pub max_params: u64,
}

impl From<&EvalBudget> for WireBudget {
    fn from(b: &EvalBudget) -> Self {
        WireBudget { epochs: b.epochs, time_s: b.time_limit, max_params: b.max_params }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PluginMessage {
    Hello {
        protocol: u32,
        #[serde(default)]
        name: String,
    },
    Result {
        id: u64,
        accuracy: f64,
        #[serde(default)]
        params: u64,
        #[serde(default)]
        notes: String,
    },
    Error {
        id: u64,
        message: String,
    },
}

/// Parsed answer to one eval request.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Scored(Score),
    Failed(String),
}

type Line = (usize, std::io::Result<String>);

/// One running plugin process.
pub struct PluginClient {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<Line>,
    stash: HashMap<u64, Reply>,
    name: String,
}

impl std::fmt::Debug for PluginClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PluginClient").field("name", &self.name).field("pid", &self.child.id()).finish()
    }
}

impl PluginClient {
    /// Starts `command` through `sh -c` and completes the handshake within
    /// `timeout`.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, EvalError> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(command).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::inherit());
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
        let mut child = cmd
            .spawn()
            .map_err(|e| EvalError::BackendUnavailable(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for (i, line) in BufReader::new(stdout).lines().enumerate() {
                if tx.send((i + 1, line)).is_err() {
                    break;
                }
            }
        });
        let mut client = PluginClient { child, stdin, lines: rx, stash: HashMap::new(), name: String::new() };
        client.handshake(timeout).map_err(|e| EvalError::BackendUnavailable(format!("handshake failed: {e}")))?;
        Ok(client)
    }

    fn handshake(&mut self, timeout: Duration) -> Result<(), EvalError> {
        self.send(&EngineMessage::Hello { protocol: PROTOCOL_VERSION })?;
        let (line_no, text) = self.next_line(Instant::now() + timeout)?;
        match parse_line(line_no, &text)? {
            PluginMessage::Hello { protocol, name } if protocol == PROTOCOL_VERSION => {
                self.name = name;
                Ok(())
            }
            PluginMessage::Hello { protocol, .. } => Err(EvalError::Protocol {
                line: Some(line_no),
                detail: format!("unsupported protocol version {protocol}"),
            }),
            other => Err(EvalError::Protocol { line: Some(line_no), detail: format!("expected hello, got {other:?}") }),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn send(&mut self, msg: &EngineMessage<'_>) -> Result<(), EvalError> {
        let mut line = serde_json::to_string(msg).expect("engine messages serialize");
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| EvalError::PluginExited(format!("write failed: {e}")))
    }

    fn next_line(&mut self, deadline: Instant) -> Result<(usize, String), EvalError> {
        let wait = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(wait) {
            Ok((n, Ok(text))) => Ok((n, text)),
            Ok((n, Err(e))) => Err(EvalError::Protocol { line: Some(n), detail: e.to_string() }),
            Err(RecvTimeoutError::Timeout) => Err(EvalError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(EvalError::PluginExited("plugin closed its output".into())),
        }
    }

    /// Writes one eval request without waiting for the answer.
    pub fn submit(&mut self, id: u64, genome: &Genome, network: &NetworkDescription, budget: &EvalBudget) -> Result<(), EvalError> {
        self.send(&EngineMessage::Eval { id, genome, network, budget: budget.into() })
    }

    /// Reads lines until the reply for `id` arrives, stashing replies for
    /// other ids. A malformed line fails the wait with a protocol error
    /// naming the line.
    pub fn wait(&mut self, id: u64, timeout: Duration) -> Result<Reply, EvalError> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(reply) = self.stash.remove(&id) {
                return Ok(reply);
            }
            let (line_no, text) = self.next_line(deadline)?;
            if text.trim().is_empty() {
                continue;
            }
            let (got, reply) = match parse_line(line_no, &text)? {
                PluginMessage::Result { id, accuracy, params, notes } => {
                    if !(0.0..=1.0).contains(&accuracy) {
                        return Err(EvalError::Protocol {
                            line: Some(line_no),
                            detail: format!("accuracy {accuracy} outside [0, 1]"),
                        });
                    }
                    (id, Reply::Scored(Score { accuracy, params, notes }))
                }
                PluginMessage::Error { id, message } => (id, Reply::Failed(message)),
                PluginMessage::Hello { .. } => {
                    return Err(EvalError::Protocol { line: Some(line_no), detail: "unexpected hello".into() })
                }
            };
            self.stash.insert(got, reply);
        }
    }

    /// Submits one request and waits for its reply.
    pub fn roundtrip(
        &mut self,
        id: u64,
        genome: &Genome,
        network: &NetworkDescription,
        budget: &EvalBudget,
        timeout: Duration,
    ) -> Result<Reply, EvalError> {
        self.submit(id, genome, network, budget)?;
        self.wait(id, timeout)
    }

    /// Sends `shutdown` and waits briefly for the process to exit.
    pub fn shutdown(mut self) {
        let _ = self.send(&EngineMessage::Shutdown);
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
    }
}

impl Drop for PluginClient {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            // the plugin's own children share its process group
            #[cfg(unix)]
            if let Ok(pgid) = i32::try_from(self.child.id()) {
                unsafe {
                    libc::kill(-pgid, libc::SIGKILL);
                }
            }
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

fn parse_line(line_no: usize, text: &str) -> Result<PluginMessage, EvalError> {
    serde_json::from_str(text).map_err(|e| EvalError::Protocol { line: Some(line_no), detail: e.to_string() })
}

/// Backend that scores genomes through a pool of plugin processes, one
/// request in flight per process.
#[derive(Debug)]
pub struct ExternalBackend {
    command: String,
    grace: Duration,
    idle: Mutex<Vec<PluginClient>>,
}

impl ExternalBackend {
    pub fn new(command: impl Into<String>) -> Self {
        Self::with_grace(command, DEFAULT_GRACE)
    }

    pub fn with_grace(command: impl Into<String>, grace: Duration) -> Self {
        ExternalBackend { command: command.into(), grace, idle: Mutex::new(Vec::new()) }
    }

    fn checkout(&self) -> Result<PluginClient, EvalError> {
        if let Some(client) = self.idle.lock().expect("pool lock poisoned").pop() {
            return Ok(client);
        }
        PluginClient::spawn(&self.command, self.grace)
    }

    /// Shuts down all idle plugin processes.
    pub fn shutdown(&self) {
        let clients: Vec<PluginClient> = std::mem::take(&mut *self.idle.lock().expect("pool lock poisoned"));
        for c in clients {
            c.shutdown();
        }
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Backend for ExternalBackend {
    fn source(&self) -> Source {
        Source::External
    }

    fn score(&self, job: &EvalJob, budget: &EvalBudget) -> Result<Score, EvalError> {
        let mut client = self.checkout()?;
        let timeout = Duration::from_secs_f64(budget.time_limit.max(0.0)) + self.grace;
        match client.roundtrip(job.id, &job.genome, &job.network, budget, timeout) {
            Ok(Reply::Scored(score)) => {
                self.idle.lock().expect("pool lock poisoned").push(client);
                Ok(score)
            }
            Ok(Reply::Failed(message)) => {
                self.idle.lock().expect("pool lock poisoned").push(client);
                Err(EvalError::Plugin(message))
            }
            Err(EvalError::Timeout) => Err(EvalError::BackendTimeout(job.genome.digest())),
            Err(err @ EvalError::Protocol { .. }) => {
                self.idle.lock().expect("pool lock poisoned").push(client);
                Err(err)
            }
            // the process is gone or stuck; drop it and let the next job respawn
            Err(err) => Err(err),
        }
    }
}
