//! Chat-completion backends behind one trait.
//!
//! * [`LiveBackend`] talks to an OpenAI-compatible `/chat/completions` endpoint.
//! * [`ReplayBackend`] serves responses from a transcript file.
//! * [`MockBackend`] answers with a deterministic function of the request.
//! * [`RecordingBackend`] wraps any backend and appends every exchange to a transcript.
//! * [`CachingBackend`] replays what a transcript already holds and records the rest,
//!   so an interrupted run resumes without repeating calls.
//!
//! Transcripts index responses per request digest, so the `k`-th call with a
//! given request always maps to trial `k` regardless of scheduling.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::read_jsonl_file;

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-1106";
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_TOP_P: f64 = 1.0;
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_message: String,
    pub user_message: String,
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!("temperature {} < 0", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::InvalidRequest(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }

    /// Hex SHA-256 over the canonical JSON form; stable across processes.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Model parameters shared by every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: Option<u32>,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            model: DEFAULT_MODEL.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_tokens: None,
        }
    }
}

impl ModelParams {
    pub fn request(&self, system_message: &str, user_message: &str) -> ChatRequest {
        ChatRequest {
            system_message: system_message.to_string(),
            user_message: user_message.to_string(),
            model: self.model.clone(),
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: String,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub latency_ms: u64,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ChatResponse { text: text.into(), finish_reason: "stop".into(), usage: Usage::default(), latency_ms: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub request_digest: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
    pub trial_index: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion payload: {0}")]
    Payload(String),
    #[error("no recorded response for request {digest} trial {trial}")]
    ReplayMiss { digest: String, trial: usize },
    #[error("mock backend failed: {0}")]
    Mock(String),
    #[error("transcript {path}: {message}")]
    Transcript { path: String, message: String },
    #[error("cannot write transcript {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl LlmError {
    /// Transport failures, 5xx and rate limiting are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;

    /// Completion for an explicit per-digest trial index. Backends that do not
    /// care about trial order ignore the index.
    fn complete_trial(&self, req: &ChatRequest, trial: usize) -> Result<ChatResponse, LlmError> {
        let _ = trial;
        self.complete(req)
    }

    fn describe(&self) -> String;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(req)
    }

    fn complete_trial(&self, req: &ChatRequest, trial: usize) -> Result<ChatResponse, LlmError> {
        (**self).complete_trial(req, trial)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    /// Runs `op` until it succeeds, fails permanently, or attempts run out.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, LlmError>) -> Result<T, LlmError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_transient() && attempt + 1 < self.attempts => {
                    let delay = self.base_delay * 2u32.pow(attempt);
                    log::warn!("transient failure ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// OpenAI-compatible chat-completions client.
pub struct LiveBackend {
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl std::fmt::Debug for LiveBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveBackend").field("endpoint", &self.endpoint).finish_non_exhaustive()
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl LiveBackend {
    /// Reads the API key from `api_key_env`; the key is never logged or persisted.
    pub fn from_env(endpoint: &str, api_key_env: &str) -> Result<Self, LlmError> {
        let api_key = std::env::var(api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::MissingApiKey(api_key_env.to_string()))?;
        Self::new(endpoint, api_key)
    }

    pub fn new(endpoint: &str, api_key: String) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(LiveBackend { endpoint: endpoint.to_string(), api_key, client, retry: RetryPolicy::default() })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn call_once(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let body = wire_request(req);
        let started = Instant::now();
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| LlmError::Transport(e.without_url().to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| LlmError::Transport(e.without_url().to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Http { status: status.as_u16(), body: truncate(&text, 500) });
        }
        let mut response = parse_wire_response(&text)?;
        response.latency_ms = started.elapsed().as_millis() as u64;
        Ok(response)
    }
}

fn wire_request(req: &ChatRequest) -> WireRequest<'_> {
    WireRequest {
        model: &req.model,
        messages: vec![
            WireMessage { role: "system", content: &req.system_message },
            WireMessage { role: "user", content: &req.user_message },
        ],
        temperature: req.temperature,
        top_p: req.top_p,
        max_tokens: req.max_tokens,
    }
}

fn parse_wire_response(body: &str) -> Result<ChatResponse, LlmError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| LlmError::Payload(e.to_string()))?;
    let choice = wire.choices.into_iter().next().ok_or_else(|| LlmError::Payload("no choices".into()))?;
    let text = choice.message.content.unwrap_or_default();
    let finish_reason = choice.finish_reason.unwrap_or_else(|| "unknown".into());
    if text.is_empty() && finish_reason == "stop" {
        return Err(LlmError::Payload("empty completion with finish_reason stop".into()));
    }
    Ok(ChatResponse { text, finish_reason, usage: wire.usage.unwrap_or_default(), latency_ms: 0 })
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}…", &s[..i]),
        None => s.to_string(),
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        req.validate()?;
        self.retry.run(|| self.call_once(req))
    }

    fn describe(&self) -> String {
        format!("live:{}", self.endpoint)
    }
}

/// Serves responses recorded in a transcript.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    origin: String,
    responses: HashMap<String, Vec<ChatResponse>>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl ReplayBackend {
    pub fn from_records(origin: &str, records: Vec<TranscriptRecord>) -> Result<Self, LlmError> {
        let mut slots: HashMap<String, Vec<Option<ChatResponse>>> = HashMap::new();
        for r in records {
            let trials = slots.entry(r.request_digest.clone()).or_default();
            if trials.len() <= r.trial_index {
                trials.resize(r.trial_index + 1, None);
            }
            if trials[r.trial_index].is_some() {
                return Err(LlmError::Transcript {
                    path: origin.to_string(),
                    message: format!("duplicate trial {} for request {}", r.trial_index, r.request_digest),
                });
            }
            trials[r.trial_index] = Some(r.response);
        }
        let mut responses = HashMap::new();
        for (digest, trials) in slots {
            // keep the contiguous prefix; a gap means later trials are unreachable in order
            let prefix: Vec<_> = trials.into_iter().map_while(|t| t).collect();
            responses.insert(digest, prefix);
        }
        Ok(ReplayBackend { origin: origin.to_string(), responses, cursors: Mutex::new(HashMap::new()) })
    }

    pub fn len(&self) -> usize {
        self.responses.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Recorded trial counts per digest.
    pub fn trial_counts(&self) -> HashMap<&str, usize> {
        self.responses.iter().map(|(k, v)| (k.as_str(), v.len())).collect()
    }

    pub fn lookup(&self, digest: &str, trial: usize) -> Option<&ChatResponse> {
        self.responses.get(digest).and_then(|v| v.get(trial))
    }
}

/// Opens a transcript for replay.
pub fn open_replay(path: &Path) -> Result<ReplayBackend, LlmError> {
    let origin = path.display().to_string();
    let records: Vec<TranscriptRecord> =
        read_jsonl_file(path).map_err(|e| LlmError::Transcript { path: origin.clone(), message: e.to_string() })?;
    ReplayBackend::from_records(&origin, records)
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let digest = req.digest();
        let trial = {
            let mut cursors = self.cursors.lock().expect("replay cursor lock");
            let c = cursors.entry(digest.clone()).or_insert(0);
            let t = *c;
            *c += 1;
            t
        };
        self.lookup(&digest, trial).cloned().ok_or(LlmError::ReplayMiss { digest, trial })
    }

    fn complete_trial(&self, req: &ChatRequest, trial: usize) -> Result<ChatResponse, LlmError> {
        let digest = req.digest();
        self.lookup(&digest, trial).cloned().ok_or(LlmError::ReplayMiss { digest, trial })
    }

    fn describe(&self) -> String {
        format!("replay:{}", self.origin)
    }
}

type AnswerFn = dyn Fn(&ChatRequest) -> Result<String, String> + Send + Sync;

/// Deterministic backend driven by an answer function.
pub struct MockBackend {
    name: String,
    answer: Box<AnswerFn>,
}

impl MockBackend {
    pub fn new(
        name: impl Into<String>,
        answer: impl Fn(&ChatRequest) -> Result<String, String> + Send + Sync + 'static,
    ) -> Self {
        MockBackend { name: name.into(), answer: Box::new(answer) }
    }

    /// Always answers `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        MockBackend::new(format!("constant:{text}"), move |_| Ok(text.clone()))
    }

    pub fn scripted(script: MockScript) -> Self {
        MockBackend::new("script", move |req| Ok(script.respond(&req.user_message).to_string()))
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        req.validate()?;
        (self.answer)(req).map(ChatResponse::text).map_err(LlmError::Mock)
    }

    fn describe(&self) -> String {
        format!("mock:{}", self.name)
    }
}

/// First rule whose substrings all occur in the prompt wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub default: String,
    #[serde(default, rename = "rule")]
    pub rules: Vec<MockRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: Vec<String>,
    pub response: String,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Transcript { path: origin.clone(), message: e.to_string() })?;
        toml::from_str(&text).map_err(|e| LlmError::Transcript { path: origin, message: e.to_string() })
    }

    pub fn respond(&self, prompt: &str) -> &str {
        self.rules
            .iter()
            .find(|r| r.contains.iter().all(|s| prompt.contains(s.as_str())))
            .map_or(self.default.as_str(), |r| r.response.as_str())
    }
}

struct Sink {
    path: PathBuf,
    writer: BufWriter<File>,
    next_trial: HashMap<String, usize>,
    written: HashSet<(String, usize)>,
}

impl Sink {
    fn open(path: &Path, next_trial: HashMap<String, usize>) -> Result<Self, LlmError> {
        let written = next_trial.iter().flat_map(|(d, &n)| (0..n).map(move |t| (d.clone(), t))).collect();
        let io = |source| LlmError::Io { path: path.display().to_string(), source };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Sink { path: path.to_path_buf(), writer: BufWriter::new(file), next_trial, written })
    }

    /// Appends unless this (digest, trial) pair is already on disk, which
    /// happens when identical prompts are asked for different items.
    fn append(&mut self, record: &TranscriptRecord) -> Result<(), LlmError> {
        if !self.written.insert((record.request_digest.clone(), record.trial_index)) {
            return Ok(());
        }
        let io = |source| LlmError::Io { path: self.path.display().to_string(), source };
        let line = serde_json::to_string(record).expect("transcript record serializes");
        self.writer.write_all(line.as_bytes()).map_err(io)?;
        self.writer.write_all(b"\n").map_err(io)?;
        self.writer.flush().map_err(io)
    }
}

/// Appends every exchange of the wrapped backend to a transcript.
pub struct RecordingBackend<B> {
    inner: B,
    sink: Mutex<Sink>,
}

/// Wraps `inner` so every exchange is appended to `sink`.
pub fn record_session<B: ChatBackend>(inner: B, sink: &Path) -> Result<RecordingBackend<B>, LlmError> {
    Ok(RecordingBackend { inner, sink: Mutex::new(Sink::open(sink, HashMap::new())?) })
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn into_inner(self) -> B {
        self.inner
    }

    fn record(&self, req: &ChatRequest, trial: Option<usize>) -> Result<ChatResponse, LlmError> {
        let digest = req.digest();
        // Reserve the trial index before calling so concurrent callers never collide.
        let trial_index = {
            let mut sink = self.sink.lock().expect("transcript lock");
            let next = sink.next_trial.entry(digest.clone()).or_insert(0);
            let t = trial.unwrap_or(*next);
            *next = (*next).max(t + 1);
            t
        };
        let response = self.inner.complete_trial(req, trial_index)?;
        let record =
            TranscriptRecord { request_digest: digest, request: req.clone(), response: response.clone(), trial_index };
        self.sink.lock().expect("transcript lock").append(&record)?;
        Ok(response)
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.record(req, None)
    }

    fn complete_trial(&self, req: &ChatRequest, trial: usize) -> Result<ChatResponse, LlmError> {
        self.record(req, Some(trial))
    }

    fn describe(&self) -> String {
        format!("record({})", self.inner.describe())
    }
}

/// Replays a transcript where possible, otherwise calls `inner` and appends.
pub struct CachingBackend<B> {
    cache: ReplayBackend,
    recorder: RecordingBackend<B>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl<B: ChatBackend> CachingBackend<B> {
    pub fn open(inner: B, transcript: &Path) -> Result<Self, LlmError> {
        let cache = if transcript.exists() { open_replay(transcript)? } else { ReplayBackend::default() };
        let next_trial = cache.trial_counts().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let recorder = RecordingBackend { inner, sink: Mutex::new(Sink::open(transcript, next_trial)?) };
        Ok(CachingBackend { cache, recorder, cursors: Mutex::new(HashMap::new()) })
    }

    pub fn cached(&self) -> usize {
        self.cache.len()
    }
}

impl<B: ChatBackend> ChatBackend for CachingBackend<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let digest = req.digest();
        let trial = {
            let mut cursors = self.cursors.lock().expect("cache cursor lock");
            let c = cursors.entry(digest).or_insert(0);
            let t = *c;
            *c += 1;
            t
        };
        self.complete_trial(req, trial)
    }

    fn complete_trial(&self, req: &ChatRequest, trial: usize) -> Result<ChatResponse, LlmError> {
        match self.cache.complete_trial(req, trial) {
            Ok(r) => Ok(r),
            Err(LlmError::ReplayMiss { .. }) => self.recorder.complete_trial(req, trial),
            Err(e) => Err(e),
        }
    }

    fn describe(&self) -> String {
        format!("cache({})", self.recorder.inner.describe())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn req(msg: &str) -> ChatRequest {
        ModelParams::default().request("You are a helpful assistant.", msg)
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        assert_eq!(req("a").digest(), req("a").digest());
        assert_ne!(req("a").digest(), req("b").digest());
        let mut r = req("a");
        r.temperature = 0.0;
        assert_ne!(r.digest(), req("a").digest());
    }

    #[test]
    fn request_validation() {
        let mut r = req("a");
        r.top_p = 0.0;
        assert!(r.validate().is_err());
        r.top_p = 1.0;
        r.temperature = -0.1;
        assert!(r.validate().is_err());
    }

    #[test]
    fn record_then_replay_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let counter = Arc::new(AtomicUsize::new(0));
        let c = counter.clone();
        let mock = MockBackend::new("count", move |_| Ok(format!("resp {}", c.fetch_add(1, Ordering::SeqCst))));
        let rec = record_session(mock, &path).unwrap();
        let r = req("same prompt");
        for _ in 0..10 {
            rec.complete(&r).unwrap();
        }
        drop(rec);
        let records: Vec<TranscriptRecord> = read_jsonl_file(&path).unwrap();
        let trials: Vec<_> = records.iter().map(|t| t.trial_index).collect();
        assert_eq!(trials, (0..10).collect::<Vec<_>>());

        let replay = open_replay(&path).unwrap();
        for i in 0..10 {
            assert_eq!(replay.complete(&r).unwrap().text, format!("resp {i}"));
        }
        match replay.complete(&r) {
            Err(LlmError::ReplayMiss { trial, digest }) => {
                assert_eq!(trial, 10);
                assert_eq!(digest, r.digest());
            }
            other => panic!("expected miss, got {other:?}"),
        }
        assert_eq!(replay.complete_trial(&r, 3).unwrap().text, "resp 3");
    }

    #[test]
    fn repeated_explicit_trial_is_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let rec = record_session(MockBackend::constant("True"), &path).unwrap();
        rec.complete_trial(&req("p"), 0).unwrap();
        rec.complete_trial(&req("p"), 0).unwrap();
        drop(rec);
        assert_eq!(open_replay(&path).unwrap().len(), 1);
    }

    #[test]
    fn replay_miss_names_digest() {
        let replay = ReplayBackend::default();
        let err = replay.complete(&req("x")).unwrap_err();
        assert!(err.to_string().contains(&req("x").digest()));
    }

    #[test]
    fn duplicate_trial_is_corrupt() {
        let r = req("x");
        let rec = TranscriptRecord {
            request_digest: r.digest(),
            request: r.clone(),
            response: ChatResponse::text("a"),
            trial_index: 0,
        };
        assert!(ReplayBackend::from_records("t", vec![rec.clone(), rec]).is_err());
    }

    #[test]
    fn corrupt_transcript_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(open_replay(&path), Err(LlmError::Transcript { .. })));
    }

    #[test]
    fn scripted_mock() {
        let script: MockScript = toml::from_str(
            r#"
            default = "False"
            [[rule]]
            contains = ["Data processing is limited to specific purposes"]
            response = "True"
            "#,
        )
        .unwrap();
        let mock = MockBackend::scripted(script);
        assert_eq!(
            mock.complete(&req("Statement: Data processing is limited to specific purposes")).unwrap().text,
            "True"
        );
        assert_eq!(mock.complete(&req("Statement: other")).unwrap().text, "False");
    }

    #[test]
    fn caching_backend_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let calls = Arc::new(AtomicUsize::new(0));
        let make = |calls: Arc<AtomicUsize>| {
            MockBackend::new("m", move |r| {
                calls.fetch_add(1, Ordering::SeqCst);
                Ok(r.user_message.to_uppercase())
            })
        };
        {
            let cache = CachingBackend::open(make(calls.clone()), &path).unwrap();
            cache.complete(&req("a")).unwrap();
            cache.complete(&req("b")).unwrap();
        }
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        let cache = CachingBackend::open(make(calls.clone()), &path).unwrap();
        assert_eq!(cache.cached(), 2);
        assert_eq!(cache.complete(&req("a")).unwrap().text, "A");
        assert_eq!(cache.complete(&req("b")).unwrap().text, "B");
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        assert_eq!(cache.complete(&req("a")).unwrap().text, "A");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        let replay = open_replay(&path).unwrap();
        assert_eq!(replay.len(), 3);
    }

    #[test]
    fn retry_policy_stops_on_permanent_error() {
        let policy = RetryPolicy { attempts: 3, base_delay: Duration::from_millis(1) };
        let mut n = 0;
        let r: Result<(), _> = policy.run(|| {
            n += 1;
            Err(LlmError::Http { status: 401, body: String::new() })
        });
        assert!(r.is_err());
        assert_eq!(n, 1);
        let mut n = 0;
        let r: Result<(), _> = policy.run(|| {
            n += 1;
            Err(LlmError::Http { status: 503, body: String::new() })
        });
        assert!(r.is_err());
        assert_eq!(n, 3);
    }

    #[test]
    fn wire_format() {
        let r = req("hello");
        let body = serde_json::to_value(wire_request(&r)).unwrap();
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "hello");
        assert_eq!(body["temperature"], 0.7);
        assert!(body.get("max_tokens").is_none());
        let parsed = parse_wire_response(
            r#"{"choices":[{"message":{"role":"assistant","content":"True"},"finish_reason":"stop"}],"usage":{"prompt_tokens":5,"completion_tokens":1,"total_tokens":6}}"#,
        )
        .unwrap();
        assert_eq!(parsed.text, "True");
        assert_eq!(parsed.usage.total_tokens, 6);
        assert!(parse_wire_response(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn missing_api_key() {
        let err = LiveBackend::from_env(DEFAULT_ENDPOINT, "REQSAT_TEST_KEY_THAT_IS_NOT_SET").unwrap_err();
        assert!(matches!(err, LlmError::MissingApiKey(_)));
    }
}
