//! Client for completion-style scoring servers.
//!
//! Request: `POST {endpoint}` with `{"model", "prompt", "echo": true,
//! "logprobs": true}`. The response must carry an ordered array of per-token
//! log-probabilities, either as `choices[0].logprobs.token_logprobs` (the
//! usual completions shape) or as a top-level `token_logprobs`. A leading
//! `null` (first token, no prefix) is dropped. An optional parallel `tokens`
//! array is passed through as the server's tokenization.

use super::{perplexity_from_logprobs, BackendDescriptor, Evaluation, LmError, PerplexityBackend};
use serde::Serialize;
use serde_json::Value;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

pub const ENDPOINT_ENV: &str = "DEPA_LM_ENDPOINT";
pub const MODEL_ENV: &str = "DEPA_LM_MODEL";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    /// Retries after the first attempt for transport errors and 5xx.
    pub retries: u32,
    pub backoff: Duration,
    pub max_in_flight: usize,
    /// Prompts longer than this many characters are cut from the left.
    pub max_prompt_chars: Option<usize>,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_millis(250),
            max_in_flight: 16,
            max_prompt_chars: None,
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    echo: bool,
    logprobs: bool,
}

/// Per-token scores returned by the server.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogprobs {
    pub logprobs: Vec<f64>,
    pub tokens: Option<Vec<String>>,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    slots: Slots,
    /// Set once a request has exhausted its retries without reaching the
    /// server; later requests then fail at once instead of each retrying.
    down: AtomicBool,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let slots = Slots::new(config.max_in_flight.max(1));
        Self {
            config,
            agent,
            slots,
            down: AtomicBool::new(false),
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Left-truncate to the configured character budget.
    fn prepare<'a>(&self, input: &'a str) -> (&'a str, bool) {
        match self.config.max_prompt_chars {
            Some(max) if input.chars().count() > max => {
                let skip = input.chars().count() - max;
                let start = input.char_indices().nth(skip).map_or(input.len(), |(i, _)| i);
                (&input[start..], true)
            }
            _ => (input, false),
        }
    }

    /// Fetch per-token log-probs for `prompt`, retrying transport failures
    /// and server errors with exponential backoff.
    pub fn remote_logprobs(&self, prompt: &str) -> Result<TokenLogprobs, LmError> {
        let _slot = self.slots.acquire();
        let mut attempt = 0;
        loop {
            if self.down.load(Ordering::Relaxed) {
                return Err(LmError::Unreachable(format!(
                    "{} failed earlier requests; giving up",
                    self.config.endpoint
                )));
            }
            attempt += 1;
            let err = match self.request_once(prompt) {
                Ok(v) => return Ok(v),
                Err(err) if attempt <= self.config.retries && retryable(&err) => {
                    thread::sleep(self.config.backoff * 2u32.pow(attempt - 1));
                    continue;
                }
                Err(LmError::Timeout { .. }) => LmError::Timeout { attempts: attempt },
                Err(err) => err,
            };
            if err.is_unreachable() {
                self.down.store(true, Ordering::Relaxed);
            }
            return Err(err);
        }
    }

    fn request_once(&self, prompt: &str) -> Result<TokenLogprobs, LmError> {
        let body = ScoreRequest {
            model: &self.config.model,
            prompt,
            echo: true,
            logprobs: true,
        };
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .send_json(&body)
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        if !(200..300).contains(&status) {
            return Err(LmError::Status { status, body: text });
        }
        let json: Value =
            serde_json::from_str(&text).map_err(|e| LmError::Schema(format!("response is not JSON: {e}")))?;
        parse_response(&json)
    }
}

fn retryable(err: &LmError) -> bool {
    match err {
        LmError::Unreachable(_) | LmError::Timeout { .. } => true,
        LmError::Status { status, .. } => *status >= 500 || *status == 429,
        _ => false,
    }
}

fn transport_error(err: ureq::Error) -> LmError {
    match err {
        ureq::Error::Timeout(_) => LmError::Timeout { attempts: 1 },
        other => LmError::Unreachable(other.to_string()),
    }
}

/// Extract log-probs (and tokens when present) from a scoring response.
pub fn parse_response(json: &Value) -> Result<TokenLogprobs, LmError> {
    let holder = json
        .pointer("/choices/0/logprobs")
        .filter(|v| v.is_object())
        .unwrap_or(json);
    let raw = holder
        .get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| LmError::Schema("missing token_logprobs array".into()))?;
    let tokens = match holder.get("tokens") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => Some(
            items
                .iter()
                .map(|t| t.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| LmError::Schema("tokens must be strings".into()))?,
        ),
        Some(_) => return Err(LmError::Schema("tokens must be an array".into())),
    };
    let mut logprobs = Vec::with_capacity(raw.len());
    for (i, v) in raw.iter().enumerate() {
        match v {
            Value::Null if i == 0 => continue,
            Value::Number(n) => {
                let lp = n
                    .as_f64()
                    .filter(|lp| lp.is_finite() && *lp <= 0.0)
                    .ok_or_else(|| LmError::Schema(format!("log-prob at {i} is not a finite value <= 0")))?;
                logprobs.push(lp);
            }
            _ => return Err(LmError::Schema(format!("log-prob at {i} is not a number"))),
        }
    }
    if let Some(t) = &tokens {
        if t.len() != raw.len() {
            return Err(LmError::Schema(format!(
                "{} tokens but {} log-probs",
                t.len(),
                raw.len()
            )));
        }
    }
    Ok(TokenLogprobs { logprobs, tokens })
}

impl PerplexityBackend for RemoteBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::Remote {
            endpoint: self.config.endpoint.clone(),
            model: self.config.model.clone(),
        }
    }

    fn evaluate(&self, input: &str) -> Result<Evaluation, LmError> {
        let (prompt, truncated) = self.prepare(input);
        let scored = self.remote_logprobs(prompt)?;
        Ok(Evaluation {
            perplexity: perplexity_from_logprobs(&scored.logprobs)?,
            tokens: scored.tokens,
            truncated,
        })
    }
}

/// Counting semaphore bounding concurrent requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock poisoned");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock poisoned") += 1;
        self.0.cv.notify_one();
    }
}
