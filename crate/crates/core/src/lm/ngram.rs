//! Additive-smoothed n-gram model over code tokens.
//!
//! Tokens are the code lexer's tokens (lenient mode) plus a `<nl>` marker for
//! every run of newlines. Each sequence is padded with `order - 1` begin
//! sentinels and closed by one end sentinel; the end sentinel is scored.
//!
//! `p(w | ctx) = (c(ctx, w) + alpha) / (c(ctx) + alpha * |V|)` where `V` is
//! every symbol the model can emit (all vocabulary entries except the begin
//! sentinel).

use super::{perplexity_from_logprobs, BackendDescriptor, Evaluation, LmError, PerplexityBackend};
use crate::codetext::tokenize_lenient;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const NEWLINE: &str = "<nl>";

const FORMAT_TAG: &str = "depa-ngram-v1";

#[derive(Debug, Error)]
pub enum NgramError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("order must be at least 1")]
    InvalidOrder,
    #[error("smoothing constant must be finite and > 0, got {0}")]
    InvalidAlpha(f64),
    #[error("model file")]
    Io(#[from] io::Error),
    #[error("model file is not valid: {0}")]
    Format(String),
}

/// Token stream used by the n-gram backend.
pub fn lm_tokens(s: &str) -> Vec<String> {
    let view = tokenize_lenient(s);
    let mut out = Vec::with_capacity(view.len() + 8);
    let mut cursor = 0;
    for tok in view.tokens() {
        if s[cursor..tok.span.start].contains('\n') && !out.is_empty() {
            out.push(NEWLINE.to_string());
        }
        out.push(tok.text.clone());
        cursor = tok.span.end;
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    alpha: f64,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    contexts: HashMap<Box<[u32]>, ContextCounts>,
    bos: u32,
    eos: u32,
    unk: u32,
}

impl NgramModel {
    /// Count n-grams over `corpus`. Vocabulary ids are assigned in sorted
    /// token order so the model does not depend on corpus order.
    pub fn train<S: AsRef<str>>(corpus: &[S], order: usize, alpha: f64) -> Result<Self, NgramError> {
        check_params(order, alpha)?;
        if corpus.is_empty() {
            return Err(NgramError::EmptyCorpus);
        }
        let streams: Vec<Vec<String>> = corpus.iter().map(|s| lm_tokens(s.as_ref())).collect();
        let symbols: BTreeSet<&str> = streams.iter().flatten().map(String::as_str).collect();
        let mut model = Self::with_vocab(order, alpha, symbols.into_iter())?;
        for stream in &streams {
            let ids = model.encode(stream.iter().map(String::as_str));
            for pos in order - 1..ids.len() {
                let ctx = &ids[pos + 1 - order..pos];
                let entry = model.contexts.entry(ctx.into()).or_default();
                entry.total += 1;
                *entry.next.entry(ids[pos]).or_default() += 1;
            }
        }
        Ok(model)
    }

    /// A model with no counts: every emitted symbol gets `1 / |V|`.
    pub fn uniform<'a, I>(order: usize, symbols: I) -> Result<Self, NgramError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let set: BTreeSet<&str> = symbols.into_iter().collect();
        Self::with_vocab(order, 1.0, set.into_iter())
    }

    fn with_vocab<'a>(order: usize, alpha: f64, symbols: impl Iterator<Item = &'a str>) -> Result<Self, NgramError> {
        check_params(order, alpha)?;
        let mut all: BTreeSet<String> = symbols.map(str::to_string).collect();
        for reserved in [BOS, EOS, UNK] {
            all.insert(reserved.to_string());
        }
        let vocab: Vec<String> = all.into_iter().collect();
        let index: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        Ok(Self {
            order,
            alpha,
            bos: index[BOS],
            eos: index[EOS],
            unk: index[UNK],
            vocab,
            index,
            contexts: HashMap::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Same counts, different smoothing constant.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self, NgramError> {
        check_params(self.order, alpha)?;
        Ok(Self { alpha, ..self.clone() })
    }

    /// All symbols including sentinels, in id order.
    pub fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    /// Number of symbols a distribution ranges over (vocabulary minus `<s>`).
    pub fn support_size(&self) -> usize {
        self.vocab.len() - 1
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(self.unk)
    }

    fn encode<'a>(&self, tokens: impl Iterator<Item = &'a str>) -> Vec<u32> {
        let mut ids = vec![self.bos; self.order - 1];
        ids.extend(tokens.map(|t| self.id(t)));
        ids.push(self.eos);
        ids
    }

    fn prob_ids(&self, ctx: &[u32], next: u32) -> f64 {
        let v = self.support_size() as f64;
        let (count, total) = match self.contexts.get(ctx) {
            Some(c) => (c.next.get(&next).copied().unwrap_or(0), c.total),
            None => (0, 0),
        };
        (count as f64 + self.alpha) / (total as f64 + self.alpha * v)
    }

    /// `p(next | context)`; the context is the preceding `order - 1` symbols
    /// (use [`BOS`] for padding). Unknown symbols map to [`UNK`].
    pub fn conditional(&self, context: &[&str], next: &str) -> f64 {
        assert_eq!(context.len(), self.order - 1, "context length must be order - 1");
        let ctx: Vec<u32> = context.iter().map(|t| self.id(t)).collect();
        self.prob_ids(&ctx, self.id(next))
    }

    /// Natural-log probability of every scored position (tokens then `</s>`).
    pub fn token_logprobs(&self, s: &str) -> Vec<f64> {
        let tokens = lm_tokens(s);
        if tokens.is_empty() {
            return Vec::new();
        }
        let ids = self.encode(tokens.iter().map(String::as_str));
        (self.order - 1..ids.len())
            .map(|pos| self.prob_ids(&ids[pos + 1 - self.order..pos], ids[pos]).ln())
            .collect()
    }

    pub fn perplexity_of(&self, s: &str) -> Result<f64, LmError> {
        perplexity_from_logprobs(&self.token_logprobs(s))
    }

    fn to_file(&self) -> ModelFile {
        let mut counts = BTreeMap::new();
        for (ctx, c) in &self.contexts {
            for (&next, &n) in &c.next {
                let mut key = ctx.to_vec();
                key.push(next);
                counts.insert(key, n);
            }
        }
        ModelFile {
            format: FORMAT_TAG.to_string(),
            order: self.order,
            alpha: self.alpha,
            vocab: self.vocab.clone(),
            counts: counts.into_iter().collect(),
        }
    }

    /// Canonical JSON: vocabulary in id order, n-grams sorted.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, NgramError> {
        let file: ModelFile = serde_json::from_str(json).map_err(|e| NgramError::Format(e.to_string()))?;
        if file.format != FORMAT_TAG {
            return Err(NgramError::Format(format!("unknown format tag {:?}", file.format)));
        }
        let mut model = Self::with_vocab(file.order, file.alpha, file.vocab.iter().map(String::as_str))?;
        if model.vocab != file.vocab {
            return Err(NgramError::Format("vocabulary is not sorted or lacks sentinels".into()));
        }
        let max_id = model.vocab.len() as u32;
        for (gram, n) in file.counts {
            if gram.len() != model.order || gram.iter().any(|&id| id >= max_id) {
                return Err(NgramError::Format(format!("bad n-gram entry {gram:?}")));
            }
            let (ctx, next) = gram.split_at(model.order - 1);
            let entry = model.contexts.entry(ctx.into()).or_default();
            entry.total += n;
            entry.next.insert(next[0], n);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), NgramError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NgramError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn check_params(order: usize, alpha: f64) -> Result<(), NgramError> {
    if order == 0 {
        return Err(NgramError::InvalidOrder);
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(NgramError::InvalidAlpha(alpha));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    order: usize,
    alpha: f64,
    vocab: Vec<String>,
    counts: Vec<(Vec<u32>, u64)>,
}

impl PerplexityBackend for NgramModel {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::Ngram {
            order: self.order,
            alpha: self.alpha,
        }
    }

    fn evaluate(&self, input: &str) -> Result<Evaluation, LmError> {
        self.perplexity_of(input).map(Evaluation::plain)
    }
}
