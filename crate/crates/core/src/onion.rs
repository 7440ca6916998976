//! Token-level baseline: a token's suspicion is how much perplexity drops
//! when that single token is deleted.
//!
//! Suspicions are thresholded with the same `mean + T * std` rule as the
//! line detector, and flagged tokens are mapped to the lines that contain
//! them so both detectors report in the same shape.

use crate::codetext::{tokenize_code, tokenize_subword, CodeTextError, TokenView};
use crate::corpus::{DetectionReport, Task};
use crate::depa::{mean_std, TRUNCATED_NOTE};
use crate::lm::{scoring_input, Evaluation, LmError, PerplexityBackend};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::ops::Range;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OnionError {
    #[error(transparent)]
    Lex(#[from] CodeTextError),
    #[error("need at least 2 tokens, got {0}")]
    TooFewTokens(usize),
    #[error("scoring full sequence")]
    Baseline(#[source] LmError),
    #[error("scoring variant without token {token}")]
    Backend {
        token: usize,
        #[source]
        source: LmError,
    },
}

impl OnionError {
    pub fn backend_error(&self) -> Option<&LmError> {
        match self {
            OnionError::Baseline(e) | OnionError::Backend { source: e, .. } => Some(e),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerStrategy {
    /// The language model's own pieces: server tokens for remote backends
    /// that return them, otherwise code tokens with identifiers sub-split.
    BackendNative,
    /// Whole code tokens; identifiers are never split.
    #[default]
    CodeLexer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    /// Byte span in the task's code.
    pub span: Range<usize>,
    pub text: String,
    /// Index of the containing line in the task's line view.
    pub line: usize,
    pub suspicion: f64,
    pub z: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScoreTable {
    pub rows: Vec<TokenScore>,
    pub baseline_ppl: f64,
    pub tokenizer: TokenizerStrategy,
    pub mu: f64,
    pub sigma: f64,
    pub threshold: Option<f64>,
    pub truncated: bool,
}

impl TokenScoreTable {
    pub fn flag(&self, threshold: f64) -> TokenScoreTable {
        let mut out = self.clone();
        let values: Vec<f64> = out.rows.iter().map(|r| r.suspicion).collect();
        let (mu, sigma) = mean_std(&values);
        for r in &mut out.rows {
            let dev = r.suspicion - mu;
            r.z = if sigma > 0.0 { dev / sigma } else { 0.0 };
            r.flagged = dev > threshold * sigma;
        }
        out.mu = mu;
        out.sigma = sigma;
        out.threshold = Some(threshold);
        out
    }

    pub fn flagged_lines(&self) -> BTreeSet<usize> {
        self.rows.iter().filter(|r| r.flagged).map(|r| r.line).collect()
    }

    pub fn max_z(&self) -> f64 {
        self.rows.iter().map(|r| r.z).fold(0.0_f64, f64::max)
    }

    pub fn report(&self, task_id: &str) -> DetectionReport {
        let flagged_lines = self.flagged_lines();
        DetectionReport {
            task_id: task_id.to_string(),
            verdict: !flagged_lines.is_empty(),
            flagged_lines,
            task_score: self.max_z(),
            elapsed_ms: 0.0,
            note: self.truncated.then(|| TRUNCATED_NOTE.to_string()),
        }
    }
}

/// Maps byte offsets in the code to line-view indices.
struct LineIndex {
    starts: Vec<usize>,
    view_index: Vec<Option<usize>>,
}

impl LineIndex {
    fn new(code: &str) -> Self {
        let mut starts = vec![0];
        starts.extend(code.match_indices('\n').map(|(i, _)| i + 1));
        let mut next = 0;
        let view_index = code
            .split('\n')
            .map(|raw| {
                if raw.trim().is_empty() {
                    None
                } else {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect();
        Self { starts, view_index }
    }

    fn line_of(&self, offset: usize) -> usize {
        let raw = self.starts.partition_point(|&s| s <= offset) - 1;
        // tokens never start on blank lines; fall back to the nearest earlier line
        self.view_index[..=raw].iter().rev().find_map(|v| *v).unwrap_or(0)
    }
}

/// Code with `span` deleted. A space is left behind when deletion would
/// glue two identifier characters together.
fn remove_span(code: &str, span: &Range<usize>) -> String {
    let before = &code[..span.start];
    let after = &code[span.end..];
    let glue = before.chars().next_back().is_some_and(is_word) && after.chars().next().is_some_and(is_word);
    let mut out = String::with_capacity(code.len());
    out.push_str(before);
    if glue {
        out.push(' ');
    }
    out.push_str(after);
    out
}

fn is_word(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

/// Candidate token spans within the code.
fn token_spans(
    task: &Task,
    tokenizer: TokenizerStrategy,
    lexed: TokenView,
    baseline: &Evaluation,
    prompt: &str,
) -> Vec<(Range<usize>, String)> {
    if tokenizer == TokenizerStrategy::BackendNative {
        if let Some(spans) = server_spans(task, baseline, prompt) {
            return spans;
        }
    }
    lexed.into_tokens().into_iter().map(|t| (t.span, t.text)).collect()
}

/// Server tokens that fall inside the code part of the prompt, when the
/// server's pieces exactly tile the untruncated prompt.
fn server_spans(task: &Task, baseline: &Evaluation, prompt: &str) -> Option<Vec<(Range<usize>, String)>> {
    let pieces = baseline.tokens.as_ref()?;
    if baseline.truncated || pieces.concat() != prompt {
        return None;
    }
    let code_start = prompt.len() - task.code.len();
    let mut offset = 0;
    let mut spans = Vec::new();
    for piece in pieces {
        let start = offset;
        offset += piece.len();
        if start < code_start || piece.trim().is_empty() {
            continue;
        }
        let lead = piece.len() - piece.trim_start().len();
        let trail = piece.len() - piece.trim_end().len();
        let span = start - code_start + lead..offset - code_start - trail;
        spans.push((span.clone(), task.code[span].to_string()));
    }
    Some(spans)
}

/// Score every token: one call for the full sequence plus one per
/// token-removed variant.
pub fn token_suspicion<B: PerplexityBackend + ?Sized>(
    task: &Task,
    backend: &B,
    tokenizer: TokenizerStrategy,
) -> Result<TokenScoreTable, OnionError> {
    // lex before any backend call so malformed code costs nothing
    let lexed = match tokenizer {
        TokenizerStrategy::CodeLexer => tokenize_code(&task.code)?,
        TokenizerStrategy::BackendNative => tokenize_subword(&task.code)?,
    };
    if lexed.len() < 2 && tokenizer == TokenizerStrategy::CodeLexer {
        return Err(OnionError::TooFewTokens(lexed.len()));
    }
    let prompt = scoring_input(&task.text, &task.code);
    let baseline = backend.evaluate(&prompt).map_err(OnionError::Baseline)?;
    let spans = token_spans(task, tokenizer, lexed, &baseline, &prompt);
    if spans.len() < 2 {
        return Err(OnionError::TooFewTokens(spans.len()));
    }
    let lines = LineIndex::new(&task.code);
    let mut truncated = baseline.truncated;
    let mut rows = Vec::with_capacity(spans.len());
    for (i, (span, text)) in spans.into_iter().enumerate() {
        let variant = scoring_input(&task.text, &remove_span(&task.code, &span));
        let eval = backend
            .evaluate(&variant)
            .map_err(|source| OnionError::Backend { token: i, source })?;
        truncated |= eval.truncated;
        rows.push(TokenScore {
            line: lines.line_of(span.start),
            span,
            text,
            suspicion: baseline.perplexity - eval.perplexity,
            z: 0.0,
            flagged: false,
        });
    }
    Ok(TokenScoreTable {
        rows,
        baseline_ppl: baseline.perplexity,
        tokenizer,
        mu: 0.0,
        sigma: 0.0,
        threshold: None,
        truncated,
    })
}

pub fn onion_detect<B: PerplexityBackend + ?Sized>(
    task: &Task,
    backend: &B,
    tokenizer: TokenizerStrategy,
    threshold: f64,
) -> Result<DetectionReport, OnionError> {
    let start = Instant::now();
    let table = token_suspicion(task, backend, tokenizer)?.flag(threshold);
    let mut report = table.report(&task.id);
    report.set_elapsed(start.elapsed());
    Ok(report)
}
