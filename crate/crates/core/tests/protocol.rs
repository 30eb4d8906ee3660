use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use evocell::compile::{compile, CompileSpec};
use evocell::engine::{BackendConfig, NoInterventions};
use evocell::evaluator::{evaluate_batch, EvalBudget, EvalCache, EvalError, EvalJob, ExternalBackend, PluginClient, Reply, Source};
use evocell::{BlockKind, Engine, Genome, LayerGene, RunConfig};

const PRELUDE: &str = r#"
id_of() { printf '%s' "$1" | sed -n 's/.*"id":\([0-9]*\).*/\1/p'; }
reply() { printf '{"type":"result","id":%s,"accuracy":%s,"params":7,"notes":"mock"}\n' "$1" "$2"; }
"#;

fn plugin(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, format!("{PRELUDE}\n{body}")).unwrap();
    format!("sh {}", path.display())
}

const ECHO: &str = r#"
while IFS= read -r line; do
  case "$line" in
    *'"type":"hello"'*) echo '{"type":"hello","protocol":1,"name":"echo","extra":true}' ;;
    *'"type":"eval"'*) reply "$(id_of "$line")" 0.5 ;;
    *'"type":"shutdown"'*) exit 0 ;;
  esac
done
"#;

// second output line is garbage
const MALFORMED: &str = r#"
while IFS= read -r line; do
  case "$line" in
    *'"type":"hello"'*) echo '{"type":"hello","protocol":1,"name":"bad"}' ;;
    *'"type":"eval"'*) echo 'this is not json' ;;
  esac
done
"#;

// answers two requests in reverse order
const SWAPPED: &str = r#"
read -r hello; echo '{"type":"hello","protocol":1,"name":"swap"}'
read -r first; read -r second
reply "$(id_of "$second")" 0.25
reply "$(id_of "$first")" 0.75
cat > /dev/null
"#;

const SILENT: &str = r#"
read -r hello; echo '{"type":"hello","protocol":1,"name":"silent"}'
cat > /dev/null
"#;

// misbehaves by request id: every 4th is garbage, every 5th hangs, every 6th
// reports an error
const FLAKY: &str = r#"
while IFS= read -r line; do
  case "$line" in
    *'"type":"hello"'*) echo '{"type":"hello","protocol":1,"name":"flaky"}' ;;
    *'"type":"eval"'*)
      id=$(id_of "$line")
      if [ $((id % 4)) -eq 0 ]; then echo '{"type":"result","id":';
      elif [ $((id % 5)) -eq 0 ]; then sleep 30;
      elif [ $((id % 6)) -eq 0 ]; then printf '{"type":"error","id":%s,"message":"oom"}\n' "$id";
      else reply "$id" "0.$((id % 9 + 1))"; fi ;;
  esac
done
"#;

fn job(id: u64, depth: usize) -> EvalJob {
    let genome = Genome::chained(8, vec![LayerGene::plain(BlockKind::Res, 0, 8); depth]).unwrap();
    let network = compile(&genome, &CompileSpec { input_size: (16, 16), ..Default::default() }).unwrap();
    EvalJob { id, genome, network }
}

fn quick_budget() -> EvalBudget {
    EvalBudget { time_limit: 0.3, ..Default::default() }
}

#[test]
fn echo_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = plugin(dir.path(), "echo.sh", ECHO);
    let mut client = PluginClient::spawn(&cmd, Duration::from_secs(5)).unwrap();
    assert_eq!(client.name(), "echo");
    let j = job(1, 2);
    let reply = client.roundtrip(1, &j.genome, &j.network, &EvalBudget::default(), Duration::from_secs(5)).unwrap();
    assert!(matches!(reply, Reply::Scored(ref s) if s.accuracy == 0.5 && s.params == 7));
    client.shutdown();

    let backend = ExternalBackend::with_grace(cmd, Duration::from_secs(5));
    let out = evaluate_batch(&[job(1, 1), job(2, 2)], &backend, &EvalBudget::default(), &EvalCache::in_memory(), 2).unwrap();
    assert!(out.iter().all(|r| r.accuracy == 0.5 && r.source == Source::External && r.failure.is_none()));
}

#[test]
fn malformed_line_names_line_two() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = plugin(dir.path(), "bad.sh", MALFORMED);
    let mut client = PluginClient::spawn(&cmd, Duration::from_secs(5)).unwrap();
    let j = job(1, 1);
    let err = client.roundtrip(1, &j.genome, &j.network, &EvalBudget::default(), Duration::from_secs(5)).unwrap_err();
    assert!(matches!(err, EvalError::Protocol { line: Some(2), .. }), "{err:?}");
    assert!(err.to_string().contains("line 2"));

    let backend = ExternalBackend::with_grace(cmd, Duration::from_secs(5));
    let out = evaluate_batch(&[job(1, 1)], &backend, &EvalBudget::default(), &EvalCache::in_memory(), 1).unwrap();
    assert_eq!(out[0].accuracy, 0.0);
    assert!(out[0].failure.as_deref().unwrap().contains("protocol error"));
}

#[test]
fn out_of_order_replies_are_matched() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = plugin(dir.path(), "swap.sh", SWAPPED);
    let mut client = PluginClient::spawn(&cmd, Duration::from_secs(5)).unwrap();
    let (a, b) = (job(1, 1), job(2, 2));
    client.submit(1, &a.genome, &a.network, &EvalBudget::default()).unwrap();
    client.submit(2, &b.genome, &b.network, &EvalBudget::default()).unwrap();
    let r1 = client.wait(1, Duration::from_secs(5)).unwrap();
    let r2 = client.wait(2, Duration::from_secs(5)).unwrap();
    assert!(matches!(r1, Reply::Scored(ref s) if s.accuracy == 0.75));
    assert!(matches!(r2, Reply::Scored(ref s) if s.accuracy == 0.25));
}

#[test]
fn silent_plugin_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = plugin(dir.path(), "silent.sh", SILENT);
    let backend = ExternalBackend::with_grace(cmd, Duration::from_millis(200));
    let started = Instant::now();
    let jobs = [job(1, 1)];
    let out = evaluate_batch(&jobs, &backend, &quick_budget(), &EvalCache::in_memory(), 1).unwrap();
    assert!(started.elapsed() < Duration::from_secs(5));
    assert_eq!(out[0].accuracy, 0.0);
    let expected = EvalError::BackendTimeout(jobs[0].genome.digest()).to_string();
    assert_eq!(out[0].failure.as_deref(), Some(expected.as_str()));
}

#[test]
fn missing_plugin_is_unavailable() {
    let backend = ExternalBackend::with_grace("exit 3", Duration::from_millis(500));
    let r = evaluate_batch(&[job(1, 1)], &backend, &EvalBudget::default(), &EvalCache::in_memory(), 1);
    assert!(matches!(r, Err(EvalError::BackendUnavailable(_))), "{r:?}");
}

#[test]
fn flaky_plugin_run_completes() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = plugin(dir.path(), "flaky.sh", FLAKY);
    let cfg = RunConfig {
        population_size: 8,
        phase1_generations: 3,
        input_size: (32, 32),
        parallelism: 2,
        budget: quick_budget(),
        backend: BackendConfig::External { command: cmd, grace_s: 0.2 },
        ..Default::default()
    };
    let mut engine = Engine::init(cfg, dir.path().join("run")).unwrap();
    let report = engine.run(&mut NoInterventions).unwrap();
    assert_eq!(report.history.len(), 3);
    let failures: usize = report.history.iter().map(|r| r.failures).sum();
    assert!(failures > 0);
    let flagged: Vec<_> = engine.state().hall_of_fame.iter().chain(&engine.state().population).filter(|i| i.flag.is_some()).collect();
    assert!(flagged.iter().all(|i| i.fitness == Some(0.0)));
    // failures are never cached
    assert!(engine.cache().len() < engine.state().next_request_id as usize - 1);
}
