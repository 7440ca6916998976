//! Perplexity backends.
//!
//! Every backend reduces to per-token log-probabilities; perplexity is
//! always `exp(-mean(logprob))` computed client-side by
//! [`perplexity_from_logprobs`], so the in-process n-gram model and any
//! remote log-prob server share one formula.

mod counting;
pub mod ngram;
pub mod remote;

pub use counting::CountingBackend;
pub use ngram::{NgramError, NgramModel};
pub use remote::{RemoteBackend, RemoteConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("input has no tokens to score")]
    EmptySequence,
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("server returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed server response: {0}")]
    Schema(String),
    #[error(transparent)]
    Model(#[from] NgramError),
}

impl LmError {
    /// True for failures that mean the backend could not be reached at all.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, LmError::Unreachable(_) | LmError::Timeout { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Ngram,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendDescriptor {
    Ngram { order: usize, alpha: f64 },
    Remote { endpoint: String, model: String },
    Other { name: String },
}

impl BackendDescriptor {
    pub fn kind(&self) -> Option<BackendKind> {
        match self {
            BackendDescriptor::Ngram { .. } => Some(BackendKind::Ngram),
            BackendDescriptor::Remote { .. } => Some(BackendKind::Remote),
            BackendDescriptor::Other { .. } => None,
        }
    }
}

/// Result of scoring one string.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub perplexity: f64,
    /// The backend's own tokenization of the scored input, when it exposes
    /// one. Concatenating the pieces reproduces the (possibly truncated)
    /// input.
    pub tokens: Option<Vec<String>>,
    /// The input was shortened from the left before scoring.
    pub truncated: bool,
}

impl Evaluation {
    pub fn plain(perplexity: f64) -> Self {
        Self {
            perplexity,
            tokens: None,
            truncated: false,
        }
    }
}

pub trait PerplexityBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    fn evaluate(&self, input: &str) -> Result<Evaluation, LmError>;

    fn perplexity(&self, input: &str) -> Result<f64, LmError> {
        self.evaluate(input).map(|e| e.perplexity)
    }
}

impl<B: PerplexityBackend + ?Sized> PerplexityBackend for &B {
    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }

    fn evaluate(&self, input: &str) -> Result<Evaluation, LmError> {
        (**self).evaluate(input)
    }
}

impl<B: PerplexityBackend + ?Sized> PerplexityBackend for Box<B> {
    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }

    fn evaluate(&self, input: &str) -> Result<Evaluation, LmError> {
        (**self).evaluate(input)
    }
}

/// `exp(-(1/t) * sum(logprobs))`.
pub fn perplexity_from_logprobs(logprobs: &[f64]) -> Result<f64, LmError> {
    if logprobs.is_empty() {
        return Err(LmError::EmptySequence);
    }
    let sum: f64 = logprobs.iter().sum();
    Ok((-sum / logprobs.len() as f64).exp())
}

/// The string a task is scored as: every line of the description turned into
/// a `#` comment, then the code. The result stays lexically valid code.
pub fn scoring_input(text: &str, code: &str) -> String {
    let mut out = String::with_capacity(text.len() + code.len() + 8);
    for line in text.lines() {
        let line = line.trim_end();
        if line.trim().is_empty() {
            continue;
        }
        out.push_str("# ");
        out.push_str(line.trim_start());
        out.push('\n');
    }
    out.push_str(code);
    out
}
