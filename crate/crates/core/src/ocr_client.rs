//! Chat-completions client for vision-language OCR with token logprobs.
//!
//! Every request body is hashed (SHA-256 over its canonical JSON; the
//! credential travels in a header and never enters the body). Live responses
//! are archived as `<hash>.replay.json`, and [`ReplayTransport`] serves them
//! back so a transcription can be reproduced offline.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::entropy::truncated_entropy;
use crate::error::{Error, Result};
use crate::render::image_mime;
use crate::token_stream::{SpecialTokens, TokenAlternative, TokenRecord, Transcript};

pub const DEFAULT_K: u32 = 5;
/// Largest `top_logprobs` accepted by chat-completions endpoints.
pub const K_MAX: u32 = 20;
pub const DEFAULT_TAIL_THRESHOLD: f64 = 0.1;
pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_AUTH_ENV: &str = "OPENAI_API_KEY";
pub const DEFAULT_MAX_TOKENS: u32 = 4096;

const DEFAULT_PROMPTS_TOML: &str = include_str!("../config/prompts.toml");

static LIVE_REQUESTS: AtomicUsize = AtomicUsize::new(0);

/// Number of HTTP requests attempted by [`HttpTransport`] in this process.
pub fn live_request_count() -> usize {
    LIVE_REQUESTS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
}

/// Prompt templates, normally loaded from a TOML file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompts {
    pub transcription: PromptPair,
    pub reprompt: PromptPair,
}

impl Default for Prompts {
    fn default() -> Self {
        Self::from_toml(DEFAULT_PROMPTS_TOML).expect("bundled prompts parse")
    }
}

impl Prompts {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// The bundled prompt file, verbatim.
    pub fn default_toml() -> &'static str {
        DEFAULT_PROMPTS_TOML
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestConfig {
    pub model_id: String,
    /// `top_logprobs`, within `1..=K_MAX`.
    pub k: u32,
    pub prompt_system: String,
    pub prompt_user: String,
    pub max_tokens: u32,
    pub endpoint_url: String,
    /// Name of the environment variable holding the API key.
    pub auth_token_env: String,
    pub special_tokens: SpecialTokens,
    /// Copied into the transcript's `source_meta` (e.g. a dpi label).
    pub extra_meta: BTreeMap<String, String>,
}

impl Default for RequestConfig {
    fn default() -> Self {
        Self::with_prompts(&Prompts::default())
    }
}

impl RequestConfig {
    pub fn with_prompts(prompts: &Prompts) -> Self {
        Self {
            model_id: DEFAULT_MODEL.into(),
            k: DEFAULT_K,
            prompt_system: prompts.transcription.system.clone(),
            prompt_user: prompts.transcription.user.clone(),
            max_tokens: DEFAULT_MAX_TOKENS,
            endpoint_url: DEFAULT_ENDPOINT.into(),
            auth_token_env: DEFAULT_AUTH_ENV.into(),
            special_tokens: SpecialTokens::default(),
            extra_meta: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=K_MAX).contains(&self.k) {
            return Err(Error::domain(format!("k = {} must lie in 1..={K_MAX}", self.k)));
        }
        if self.prompt_system.trim().is_empty() || self.prompt_user.trim().is_empty() {
            return Err(Error::domain("prompts must not be empty"));
        }
        if self.max_tokens == 0 {
            return Err(Error::domain("max_tokens must be positive"));
        }
        if self.model_id.is_empty() {
            return Err(Error::domain("model id must not be empty"));
        }
        Ok(())
    }
}

/// A page image and the reference recorded for it in the transcript.
#[derive(Debug, Clone)]
pub struct PageImage {
    pub bytes: Vec<u8>,
    pub reference: String,
}

impl PageImage {
    /// Reads an image file. A missing or empty file is a startup error.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Startup(format!("image {} does not exist", path.display())));
        }
        let bytes = fs::read(path)?;
        if bytes.is_empty() {
            return Err(Error::Startup(format!("image {} is empty", path.display())));
        }
        let reference = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Ok(Self { bytes, reference })
    }

    pub fn data_url(&self) -> String {
        format!(
            "data:{};base64,{}",
            image_mime(&self.bytes),
            base64::engine::general_purpose::STANDARD.encode(&self.bytes)
        )
    }
}

/// A serialized request body and its replay key.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    body: Vec<u8>,
    hash: String,
}

impl ChatRequest {
    pub fn new(body: &Value) -> Result<Self> {
        let body = serde_json::to_vec(body)?;
        let hash = hex::encode(Sha256::digest(&body));
        Ok(Self { body, hash })
    }

    pub fn body(&self) -> &[u8] {
        &self.body
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }
}

/// Request body asking for a transcription with `top_logprobs = k`.
pub fn transcription_request(image: &PageImage, cfg: &RequestConfig) -> Result<ChatRequest> {
    cfg.validate()?;
    ChatRequest::new(&json!({
        "model": cfg.model_id,
        "max_tokens": cfg.max_tokens,
        "logprobs": true,
        "top_logprobs": cfg.k,
        "messages": [
            {"role": "system", "content": cfg.prompt_system},
            {"role": "user", "content": [
                {"type": "text", "text": cfg.prompt_user},
                {"type": "image_url", "image_url": {"url": image.data_url()}},
            ]},
        ],
    }))
}

/// Sends a request and returns the raw response body.
pub trait Transport {
    fn send(&self, request: &ChatRequest) -> Result<Vec<u8>>;
}

impl<T: Transport + ?Sized> Transport for &T {
    fn send(&self, request: &ChatRequest) -> Result<Vec<u8>> {
        (**self).send(request)
    }
}

/// One archived response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayArchive {
    pub request_hash: String,
    pub captured_at: String,
    pub raw_response: String,
}

/// A directory of `<hash>.replay.json` files.
#[derive(Debug, Clone)]
pub struct ReplayStore {
    dir: PathBuf,
}

impl ReplayStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.replay.json"))
    }

    pub fn load(&self, hash: &str) -> Result<ReplayArchive> {
        let path = self.path_for(hash);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::ReplayMiss {
                    hash: hash.into(),
                    dir: self.dir.display().to_string(),
                })
            }
            Err(e) => return Err(e.into()),
        };
        let archive: ReplayArchive = serde_json::from_str(&text)?;
        if archive.request_hash != hash {
            return Err(Error::Structure(format!(
                "{} records hash {}",
                path.display(),
                archive.request_hash
            )));
        }
        Ok(archive)
    }

    /// Writes an archive atomically (temp file in the same directory, then
    /// rename).
    pub fn save(&self, archive: &ReplayArchive) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path_for(&archive.request_hash);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        serde_json::to_writer_pretty(&mut tmp, archive)?;
        tmp.write_all(b"\n")?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| Error::Io(e.error))?;
        Ok(path)
    }
}

/// Serves archived responses; never touches the network.
#[derive(Debug, Clone)]
pub struct ReplayTransport {
    store: ReplayStore,
}

impl ReplayTransport {
    pub fn new(store: ReplayStore) -> Self {
        Self { store }
    }
}

impl Transport for ReplayTransport {
    fn send(&self, request: &ChatRequest) -> Result<Vec<u8>> {
        log::debug!("replaying {}", request.hash());
        Ok(self.store.load(request.hash())?.raw_response.into_bytes())
    }
}

/// Forwards to another transport and archives every response it returns.
pub struct RecordingTransport<T> {
    inner: T,
    store: ReplayStore,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, store: ReplayStore) -> Self {
        Self { inner, store }
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&self, request: &ChatRequest) -> Result<Vec<u8>> {
        let raw = self.inner.send(request)?;
        let raw_response = String::from_utf8(raw.clone()).map_err(|_| Error::Transport {
            status: None,
            message: "response body is not UTF-8".into(),
        })?;
        let path = self.store.save(&ReplayArchive {
            request_hash: request.hash().into(),
            captured_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            raw_response,
        })?;
        log::info!("archived response to {}", path.display());
        Ok(raw)
    }
}

/// HTTPS transport with bearer authentication and up to three attempts on
/// rate limiting, server errors and connection failures.
pub struct HttpTransport {
    url: String,
    credential: String,
    agent: ureq::Agent,
    attempts: u32,
    backoff: Duration,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("url", &self.url)
            .field("credential", &"<redacted>")
            .finish()
    }
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, credential: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        Self {
            url: url.into(),
            credential: credential.into(),
            agent,
            attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }

    /// Reads the credential from the environment variable named in `cfg`.
    pub fn from_config(cfg: &RequestConfig) -> Result<Self> {
        match std::env::var(&cfg.auth_token_env) {
            Ok(token) if !token.trim().is_empty() => Ok(Self::new(&cfg.endpoint_url, token.trim())),
            _ => Err(Error::Startup(format!(
                "environment variable {} holding the API key is not set",
                cfg.auth_token_env
            ))),
        }
    }

    /// Base delay between attempts; doubled after each failure.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, request: &ChatRequest) -> std::result::Result<Vec<u8>, (bool, Error)> {
        LIVE_REQUESTS.fetch_add(1, Ordering::SeqCst);
        let response = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.credential))
            .header("Content-Type", "application/json")
            .send(request.body());
        let mut response = match response {
            Ok(r) => r,
            Err(e) => {
                return Err((
                    true,
                    Error::Transport {
                        status: None,
                        message: e.to_string(),
                    },
                ))
            }
        };
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| {
                (
                    true,
                    Error::Transport {
                        status: Some(status),
                        message: e.to_string(),
                    },
                )
            })?;
        if (200..300).contains(&status) {
            return Ok(body);
        }
        let retry = status == 429 || status >= 500;
        let detail = String::from_utf8_lossy(&body);
        let detail: String = detail.chars().take(300).collect();
        Err((
            retry,
            Error::Transport {
                status: Some(status),
                message: detail.replace(&self.credential, "<redacted>"),
            },
        ))
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<Vec<u8>> {
        let mut delay = self.backoff;
        let mut attempt = 1;
        loop {
            log::info!("POST {} (request {}, attempt {attempt})", self.url, request.hash());
            match self.attempt(request) {
                Ok(body) => return Ok(body),
                Err((true, e)) if attempt < self.attempts => {
                    log::warn!("attempt {attempt} failed: {e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    #[serde(default)]
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: Option<CompletionMessage>,
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    top_logprobs: Option<Vec<TopLogprob>>,
}

#[derive(Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

fn malformed(message: impl Into<String>) -> Error {
    Error::Transport {
        status: None,
        message: message.into(),
    }
}

/// Parses the assistant reply text of a chat completion.
pub fn parse_reply_text(raw: &[u8]) -> Result<String> {
    let response: CompletionResponse = serde_json::from_slice(raw)
        .map_err(|e| malformed(format!("response is not a chat completion: {e}")))?;
    response
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message)
        .and_then(|m| m.content)
        .ok_or_else(|| malformed("response has no message content"))
}

/// Parses a chat completion with logprobs into reply text and token records.
pub fn parse_completion(raw: &[u8], special: &SpecialTokens) -> Result<(String, Vec<TokenRecord>)> {
    let response: CompletionResponse = serde_json::from_slice(raw)
        .map_err(|e| malformed(format!("response is not a chat completion: {e}")))?;
    let choice = response
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| malformed("response has no choices"))?;
    let no_logprobs = || {
        Error::Capability(
            "the response carries no token logprobs; this model or endpoint configuration \
             does not expose them (a chat-completions model accepting logprobs=true and \
             top_logprobs is required)"
                .into(),
        )
    };
    let content = choice
        .logprobs
        .and_then(|l| l.content)
        .filter(|c| !c.is_empty())
        .ok_or_else(no_logprobs)?;

    let mut records = Vec::with_capacity(content.len());
    for (pos, entry) in content.into_iter().enumerate() {
        let top = entry.top_logprobs.ok_or_else(no_logprobs)?;
        let top = top
            .into_iter()
            .map(|t| TokenAlternative::new(t.token, t.logprob.min(0.0)))
            .collect();
        let is_special = special.is_special(&entry.token);
        records.push(TokenRecord::from_endpoint(
            pos + 1,
            entry.token,
            entry.logprob.min(0.0),
            top,
            is_special,
        ));
    }
    let text = choice
        .message
        .and_then(|m| m.content)
        .unwrap_or_else(|| records.iter().map(|r| r.chosen_text.as_str()).collect());
    Ok((text, records))
}

/// Transcribes one page with `top_logprobs = cfg.k`.
pub fn transcribe(transport: &dyn Transport, image: &PageImage, cfg: &RequestConfig) -> Result<Transcript> {
    let request = transcription_request(image, cfg)?;
    let raw = transport.send(&request)?;
    let (text, records) = parse_completion(&raw, &cfg.special_tokens)?;

    let mut meta = cfg.extra_meta.clone();
    meta.insert("model".into(), cfg.model_id.clone());
    meta.insert("k".into(), cfg.k.to_string());
    meta.insert("image".into(), image.reference.clone());
    meta.insert("max_tokens".into(), cfg.max_tokens.to_string());
    meta.insert("request_hash".into(), request.hash().into());
    Transcript::new(records, text, meta)
}

/// Raises `k` and retries the whole request while some token's tail mass
/// exceeds the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscalationPolicy {
    pub tail_threshold: f64,
    pub step: u32,
    pub k_max: u32,
    pub max_escalations: u32,
}

impl Default for EscalationPolicy {
    fn default() -> Self {
        Self {
            tail_threshold: DEFAULT_TAIL_THRESHOLD,
            step: 5,
            k_max: K_MAX,
            max_escalations: 3,
        }
    }
}

impl EscalationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.tail_threshold > 0.0 && self.tail_threshold < 1.0) {
            return Err(Error::domain(format!(
                "tail threshold {} must lie in (0, 1)",
                self.tail_threshold
            )));
        }
        if self.step == 0 || self.k_max == 0 || self.k_max > K_MAX {
            return Err(Error::domain("escalation step and k_max must be positive, k_max <= 20"));
        }
        Ok(())
    }
}

fn max_tail(transcript: &Transcript) -> f64 {
    transcript
        .tokens()
        .iter()
        .map(|r| truncated_entropy(r).tail_mass)
        .fold(0.0, f64::max)
}

/// [`transcribe`] with whole-request escalation of `k`.
///
/// Running out of escalations is not an error: the last transcript is
/// returned with `escalation_exhausted = "true"` in its metadata.
pub fn transcribe_adaptive(
    transport: &dyn Transport,
    image: &PageImage,
    cfg: &RequestConfig,
    policy: &EscalationPolicy,
) -> Result<Transcript> {
    policy.validate()?;
    let mut cfg = cfg.clone();
    let mut transcript = transcribe(transport, image, &cfg)?;
    let mut escalations = 0;
    let mut tail = max_tail(&transcript);
    while tail > policy.tail_threshold && escalations < policy.max_escalations && cfg.k < policy.k_max {
        let next = (cfg.k + policy.step).min(policy.k_max);
        log::info!("max tail mass {tail:.3} above {}; retrying with k = {next}", policy.tail_threshold);
        cfg.k = next;
        transcript = transcribe(transport, image, &cfg)?;
        escalations += 1;
        tail = max_tail(&transcript);
    }
    let mut transcript = transcript
        .with_meta("escalations", escalations.to_string())
        .with_meta("tail_threshold", policy.tail_threshold.to_string());
    if tail > policy.tail_threshold {
        log::warn!("tail mass still {tail:.3} after {escalations} escalation(s)");
        transcript = transcript.with_meta("escalation_exhausted", "true");
    }
    Ok(transcript)
}
