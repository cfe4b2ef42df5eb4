//! External-model comparison harness: renders letter-string tasks as
//! chat prompts, queries an HTTP chat-completion endpoint, parses the
//! answers, and scores them with the same exact-match rule as the local
//! evaluator so both tables join directly.

use crate::alphabet::{Alphabet, LetterString};
use crate::eval::{AggregateRow, Cell, EvalResult};
use crate::taskgen::AnalogyTask;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Recorded per result row so template changes never silently alter
/// comparisons.
pub const PROMPT_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("credential environment variable `{0}` is not set")]
    AuthFailure(String),
    #[error("request timed out after retries")]
    Timeout,
    #[error("rate limited after retries")]
    RateLimited,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("endpoint error after retries: {0}")]
    Endpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Chat-completions URL, e.g. `https://host/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key. Only the
    /// name is ever stored; the value is read at request time.
    pub credential_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub temperature: f64,
    pub max_concurrency: usize,
}

impl ProbeConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, credential_env: impl Into<String>) -> Self {
        ProbeConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            credential_env: credential_env.into(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 250,
            temperature: 0.0,
            max_concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task_index: usize,
    pub transformation: String,
    pub raw_response: String,
    /// Parsed answer in spaced form, absent on parse failure.
    pub parsed: Option<String>,
    pub parse_failure: bool,
    pub target: String,
    pub correct: bool,
    pub latency_secs: f64,
    pub prompt_version: String,
}

#[derive(Debug)]
pub struct ProbeReport {
    pub results: Vec<ProbeResult>,
    /// Error that aborted the run, if any; `results` holds the tasks
    /// completed before the abort.
    pub aborted: Option<ProbeError>,
}

// ---------------------------------------------------------------------------
// Prompt rendering
// ---------------------------------------------------------------------------

/// Deterministic prompt: alphabet line, one line per example, the query,
/// and an instruction to answer with space-separated letters on the
/// final line.
pub fn render_prompt(task: &AnalogyTask) -> String {
    let mut out = String::new();
    out.push_str("Use this alphabet order: ");
    let order: Vec<String> = task.alphabet.order().iter().map(|l| l.symbol().to_string()).collect();
    out.push_str(&order.join(" "));
    out.push('\n');
    for (ex_in, ex_out) in &task.examples {
        out.push_str(&format!("Example: {} -> {}\n", ex_in.spaced(), ex_out.spaced()));
    }
    out.push_str(&format!("Problem: {} -> ?\n", task.query.spaced()));
    out.push_str("Reply with only the answer letters, space-separated, on the final line.");
    out
}

/// Inverse of [`render_prompt`] for the fields the template carries:
/// alphabet order, examples, and query.
pub fn parse_prompt(prompt: &str) -> Option<(Alphabet, Vec<(LetterString, LetterString)>, LetterString)> {
    let mut alphabet = None;
    let mut examples = Vec::new();
    let mut query = None;
    for line in prompt.lines() {
        if let Some(rest) = line.strip_prefix("Use this alphabet order: ") {
            alphabet = Alphabet::from_order_str(&rest.replace(' ', ""), 0, 0).ok();
        } else if let Some(rest) = line.strip_prefix("Example: ") {
            let (a, b) = rest.split_once(" -> ")?;
            examples.push((LetterString::parse(a).ok()?, LetterString::parse(b).ok()?));
        } else if let Some(rest) = line.strip_prefix("Problem: ") {
            let (q, _) = rest.split_once(" -> ")?;
            query = LetterString::parse(q).ok();
        }
    }
    Some((alphabet?, examples, query?))
}

// ---------------------------------------------------------------------------
// Answer parsing
// ---------------------------------------------------------------------------

/// Extracts the last contiguous run of single letters (space- or
/// comma-separated) from a response, stripping punctuation and quotes.
/// A trailing multi-letter lowercase word is accepted unspaced.
pub fn parse_answer(raw: &str) -> Option<LetterString> {
    let tokens: Vec<&str> = raw
        .split([' ', '\n', '\t', ','])
        .map(|t| t.trim_matches(|c: char| !c.is_ascii_alphabetic()))
        .filter(|t| !t.is_empty())
        .collect();
    // last contiguous run of single-letter tokens
    let mut best: Option<(usize, usize)> = None;
    let mut run_start = None;
    for (i, t) in tokens.iter().enumerate() {
        let is_letter = t.len() == 1 && t.chars().next().unwrap().is_ascii_lowercase();
        match (is_letter, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                best = Some((s, i));
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        best = Some((s, tokens.len()));
    }
    if let Some((s, e)) = best {
        let joined = tokens[s..e].join(" ");
        if let Ok(ls) = LetterString::parse(&joined) {
            return Some(ls);
        }
    }
    // unspaced fallback: the response is a single lowercase word
    if tokens.len() == 1 && tokens[0].len() > 1 && tokens[0].chars().all(|c| c.is_ascii_lowercase()) {
        let spaced: Vec<String> = tokens[0].chars().map(|c| c.to_string()).collect();
        return LetterString::parse(&spaced.join(" ")).ok();
    }
    None
}

// ---------------------------------------------------------------------------
// HTTP client
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

/// Issues one chat-completion request with retries and exponential
/// backoff on transient failures (HTTP 429/5xx, transport errors). The
/// credential is read from the configured environment variable before
/// any network activity and never persisted.
pub fn query_model(config: &ProbeConfig, prompt: &str) -> Result<String, ProbeError> {
    let key = std::env::var(&config.credential_env)
        .map_err(|_| ProbeError::AuthFailure(config.credential_env.clone()))?;
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_secs(config.timeout_secs))
        .build();
    let body = ChatRequest {
        model: &config.model,
        messages: vec![ChatMessage { role: "user", content: prompt }],
        temperature: config.temperature,
    };
    let payload = serde_json::to_string(&body).expect("request serializes");
    let mut last: Option<ProbeError> = None;
    for attempt in 0..=config.max_retries {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(config.backoff_ms << (attempt - 1)));
        }
        let resp = agent
            .post(&config.endpoint)
            .set("authorization", &format!("Bearer {key}"))
            .set("content-type", "application/json")
            .send_string(&payload);
        match resp {
            Ok(r) => {
                let text = r.into_string().map_err(|e| ProbeError::MalformedResponse(e.to_string()))?;
                let parsed: ChatResponse =
                    serde_json::from_str(&text).map_err(|e| ProbeError::MalformedResponse(e.to_string()))?;
                let choice = parsed
                    .choices
                    .into_iter()
                    .next()
                    .ok_or_else(|| ProbeError::MalformedResponse("no choices".into()))?;
                return Ok(choice.message.content);
            }
            Err(ureq::Error::Status(code, _)) if code == 429 => last = Some(ProbeError::RateLimited),
            Err(ureq::Error::Status(code, _)) if code >= 500 => {
                last = Some(ProbeError::Endpoint(format!("status {code}")))
            }
            Err(ureq::Error::Status(code, _)) => {
                return Err(ProbeError::Endpoint(format!("status {code}")));
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                last = Some(if msg.contains("timed out") || msg.contains("timeout") {
                    ProbeError::Timeout
                } else {
                    ProbeError::Endpoint(msg)
                });
            }
        }
    }
    Err(last.unwrap_or(ProbeError::Timeout))
}

// ---------------------------------------------------------------------------
// Probe driver
// ---------------------------------------------------------------------------

fn score_task(config: &ProbeConfig, index: usize, task: &AnalogyTask) -> Result<ProbeResult, ProbeError> {
    let prompt = render_prompt(task);
    let start = Instant::now();
    let raw = query_model(config, &prompt)?;
    let latency = start.elapsed().as_secs_f64();
    let parsed = parse_answer(&raw);
    let target = task.target.spaced();
    let correct = parsed.as_ref().map(|p| p.spaced() == target).unwrap_or(false);
    Ok(ProbeResult {
        task_index: index,
        transformation: format!("{:?}", task.transformation),
        raw_response: raw,
        parsed: parsed.as_ref().map(|p| p.spaced()),
        parse_failure: parsed.is_none(),
        target,
        correct,
        latency_secs: latency,
        prompt_version: PROMPT_VERSION.to_string(),
    })
}

/// Queries every task with bounded concurrency. Tasks are never
/// mutated; a persistent endpoint failure stops the run and the report
/// keeps all results gathered so far. When `out` is given, results are
/// appended there as line-delimited JSON (partial on abort).
pub fn run_probe(config: &ProbeConfig, tasks: &[AnalogyTask], out: Option<&Path>) -> Result<ProbeReport, ProbeError> {
    // fail before any network call if the credential is missing
    if std::env::var(&config.credential_env).is_err() {
        return Err(ProbeError::AuthFailure(config.credential_env.clone()));
    }
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<ProbeResult>>> = Mutex::new(vec![None; tasks.len()]);
    let failure: Mutex<Option<ProbeError>> = Mutex::new(None);
    let workers = config.max_concurrency.max(1).min(tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= tasks.len() {
                    return;
                }
                match score_task(config, i, &tasks[i]) {
                    Ok(res) => slots.lock().unwrap()[i] = Some(res),
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        let mut f = failure.lock().unwrap();
                        if f.is_none() {
                            *f = Some(e);
                        }
                        return;
                    }
                }
            });
        }
    });
    let results: Vec<ProbeResult> = slots.into_inner().unwrap().into_iter().flatten().collect();
    if let Some(path) = out {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &results {
            serde_json::to_writer(&mut file, r).map_err(|e| ProbeError::MalformedResponse(e.to_string()))?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
    }
    Ok(ProbeReport { results, aborted: failure.into_inner().unwrap() })
}

impl ProbeReport {
    pub fn accuracy(&self) -> Option<f64> {
        if self.results.is_empty() {
            return None;
        }
        Some(self.results.iter().filter(|r| r.correct).count() as f64 / self.results.len() as f64)
    }

    pub fn parse_failure_rate(&self) -> Option<f64> {
        if self.results.is_empty() {
            return None;
        }
        Some(self.results.iter().filter(|r| r.parse_failure).count() as f64 / self.results.len() as f64)
    }

    /// Converts probe rows into the evaluator's result schema so the
    /// grouping and aggregation helpers apply unchanged.
    pub fn to_eval_results(&self, tasks: &[AnalogyTask], cell: Cell) -> Vec<EvalResult> {
        self.results
            .iter()
            .map(|r| EvalResult {
                index: r.task_index,
                transformation: tasks[r.task_index].transformation,
                is_copy: tasks[r.task_index].is_copy,
                predicted: r.parsed.clone().unwrap_or_default(),
                target: r.target.clone(),
                correct: r.correct,
                cell,
                error_label: r.parse_failure.then(|| "parse_failure".to_string()),
            })
            .collect()
    }
}

/// Joins per-source aggregate tables into one CSV with a leading
/// `source` column, aligning the local model and external models.
pub fn joined_csv(tables: &[(&str, &[AggregateRow])]) -> String {
    let mut out = String::from("source,group,mean_accuracy,pooled_accuracy,ci_lo,ci_hi,n_runs\n");
    for (source, rows) in tables {
        for row in *rows {
            out.push_str(&format!(
                "{source},{},{:.6},{:.6},{:.6},{:.6},{}\n",
                row.group, row.mean_accuracy, row.pooled_accuracy, row.ci_lo, row.ci_hi, row.n_runs
            ));
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::taskgen::{build_task, task_rng};
    use crate::transform::Transformation;
    use std::io::{BufRead, BufReader, Read as _};
    use std::net::TcpListener;

    fn sample_task(seed: u64) -> AnalogyTask {
        let alphabet = Alphabet::standard();
        let mut rng = task_rng(seed, 0, 0);
        build_task(Transformation::Predecessor, &alphabet, &mut rng, 1, false).unwrap()
    }

    /// Minimal HTTP/1.1 chat-completions mock. `replies` are served in
    /// order as (status, content) pairs; the content is wrapped in the
    /// chat-response JSON unless the status is not 200.
    pub(crate) fn mock_server(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, content) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut line = String::new();
                let mut content_length = 0usize;
                reader.read_line(&mut line).unwrap();
                loop {
                    let mut header = String::new();
                    reader.read_line(&mut header).unwrap();
                    if let Some(v) = header.to_ascii_lowercase().strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                    if header == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0u8; content_length];
                reader.read_exact(&mut body).unwrap();
                bodies.push(String::from_utf8(body).unwrap());
                let payload = if status == 200 {
                    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
                        .to_string()
                } else {
                    content
                };
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                use std::io::Write as _;
                reader.get_mut().write_all(reply.as_bytes()).unwrap();
            }
            bodies
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    fn mock_config(endpoint: String) -> ProbeConfig {
        std::env::set_var("LSA_TEST_PROBE_KEY", "test-key");
        let mut cfg = ProbeConfig::new(endpoint, "mock-model", "LSA_TEST_PROBE_KEY");
        cfg.max_concurrency = 1;
        cfg.backoff_ms = 1;
        cfg
    }

    #[test]
    fn prompt_contains_alphabet_and_roundtrips() {
        let task = sample_task(1);
        let prompt = render_prompt(&task);
        assert!(prompt.contains("a b c d e f g h i j k l m n o p q r s t u v w x y z"));
        assert_eq!(render_prompt(&task), prompt);
        let (alphabet, examples, query) = parse_prompt(&prompt).unwrap();
        assert_eq!(alphabet.order_string(), task.alphabet.order_string());
        assert_eq!(examples, task.examples);
        assert_eq!(query, task.query);
    }

    #[test]
    fn parse_answer_variants() {
        assert_eq!(parse_answer("The answer is: a c d").unwrap().spaced(), "a c d");
        assert_eq!(parse_answer("acd").unwrap().spaced(), "a c d");
        assert_eq!(parse_answer("answer: \"a, b, c\".").unwrap().spaced(), "a b c");
        assert_eq!(parse_answer("x y z\nFinal: b c").unwrap().spaced(), "b c");
        assert!(parse_answer("No letters here: 123 !?").is_none());
        assert!(parse_answer("").is_none());
    }

    #[test]
    fn auth_failure_before_any_network_call() {
        std::env::remove_var("LSA_TEST_PROBE_MISSING");
        let cfg = ProbeConfig::new("http://127.0.0.1:9/never", "m", "LSA_TEST_PROBE_MISSING");
        match query_model(&cfg, "hi") {
            Err(ProbeError::AuthFailure(name)) => assert_eq!(name, "LSA_TEST_PROBE_MISSING"),
            other => panic!("expected AuthFailure, got {other:?}"),
        }
        assert!(matches!(run_probe(&cfg, &[sample_task(2)], None), Err(ProbeError::AuthFailure(_))));
    }

    #[test]
    fn mock_roundtrip_and_request_shape() {
        let (endpoint, handle) = mock_server(vec![(200, "a c d".into())]);
        let cfg = mock_config(endpoint);
        let raw = query_model(&cfg, "what comes next?").unwrap();
        assert_eq!(raw, "a c d");
        let bodies = handle.join().unwrap();
        let req: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(req["model"], "mock-model");
        assert_eq!(req["temperature"], 0.0);
        assert_eq!(req["messages"][0]["content"], "what comes next?");
    }

    #[test]
    fn transient_failures_are_retried() {
        let (endpoint, handle) = mock_server(vec![
            (500, "{}".into()),
            (500, "{}".into()),
            (200, "b".into()),
        ]);
        let cfg = mock_config(endpoint);
        assert_eq!(query_model(&cfg, "q").unwrap(), "b");
        assert_eq!(handle.join().unwrap().len(), 3);
    }

    #[test]
    fn persistent_rate_limit_after_retries() {
        let n = 1 + ProbeConfig::new("", "", "").max_retries as usize;
        let (endpoint, handle) = mock_server(vec![(429, "{}".into()); n]);
        let cfg = mock_config(endpoint);
        assert!(matches!(query_model(&cfg, "q"), Err(ProbeError::RateLimited)));
        handle.join().unwrap();
    }

    #[test]
    fn probe_scores_with_exact_match_rule() {
        let task = sample_task(3);
        let target = task.target.spaced();
        let (endpoint, handle) =
            mock_server(vec![(200, format!("Sure! The answer is {target}"))]);
        let cfg = mock_config(endpoint);
        let report = run_probe(&cfg, std::slice::from_ref(&task), None).unwrap();
        handle.join().unwrap();
        assert!(report.aborted.is_none());
        assert_eq!(report.accuracy(), Some(1.0));
        assert_eq!(report.parse_failure_rate(), Some(0.0));
        let rows = report.to_eval_results(std::slice::from_ref(&task), Cell { new_alphabet: false, class: crate::transform::TransformClass::Seen });
        assert!(rows[0].correct);
    }

    #[test]
    fn empty_responses_are_parse_failures() {
        let tasks = vec![sample_task(4), sample_task(5)];
        let (endpoint, handle) = mock_server(vec![(200, "".into()), (200, "".into())]);
        let cfg = mock_config(endpoint);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("probe.jsonl");
        let report = run_probe(&cfg, &tasks, Some(&out)).unwrap();
        handle.join().unwrap();
        assert_eq!(report.accuracy(), Some(0.0));
        assert_eq!(report.parse_failure_rate(), Some(1.0));
        let persisted = std::fs::read_to_string(&out).unwrap();
        assert_eq!(persisted.lines().count(), 2);
        assert!(!persisted.contains("test-key"), "credential must never be persisted");
    }

    #[test]
    fn abort_preserves_partial_results() {
        let n = 1 + ProbeConfig::new("", "", "").max_retries as usize;
        let mut replies = vec![(200, "a".into())];
        replies.extend(vec![(404, "{}".to_string()); 1]);
        let (endpoint, handle) = mock_server(replies);
        let cfg = mock_config(endpoint);
        let _ = n;
        let tasks = vec![sample_task(6), sample_task(7), sample_task(8)];
        let report = run_probe(&cfg, &tasks, None).unwrap();
        handle.join().unwrap();
        assert!(report.aborted.is_some());
        assert_eq!(report.results.len(), 1);
    }

    #[test]
    fn joined_csv_has_source_column() {
        let row = AggregateRow {
            group: "Predecessor".into(),
            mean_accuracy: 0.5,
            pooled_accuracy: 0.5,
            ci_lo: 0.4,
            ci_hi: 0.6,
            n_runs: 1,
        };
        let csv = joined_csv(&[("local", std::slice::from_ref(&row)), ("gpt-mock", std::slice::from_ref(&row))]);
        assert!(csv.starts_with("source,group,"));
        assert!(csv.contains("local,Predecessor"));
        assert!(csv.contains("gpt-mock,Predecessor"));
    }
}
