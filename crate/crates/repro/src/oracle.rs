use depa::lm::ngram::{lm_tokens, BOS, EOS, UNK};
use depa::lm::{scoring_input, PerplexityBackend};
use depa::Task;
use num_rational::Ratio;
use std::collections::{BTreeSet, HashMap};

/// Count-based n-gram model over string keys, scored by the chain rule.
pub struct ChainRule {
    order: usize,
    alpha: f64,
    vocab: BTreeSet<String>,
    contexts: HashMap<Vec<String>, u64>,
    grams: HashMap<Vec<String>, u64>,
}

fn padded(order: usize, tokens: Vec<String>) -> Vec<String> {
    let mut out = vec![BOS.to_string(); order - 1];
    out.extend(tokens);
    out.push(EOS.to_string());
    out
}

impl ChainRule {
    pub fn train<S: AsRef<str>>(corpus: &[S], order: usize, alpha: f64) -> Self {
        let mut vocab: BTreeSet<String> = [EOS, UNK].into_iter().map(String::from).collect();
        let mut contexts = HashMap::new();
        let mut grams = HashMap::new();
        for s in corpus {
            let tokens = lm_tokens(s.as_ref());
            vocab.extend(tokens.iter().cloned());
            for w in padded(order, tokens).windows(order) {
                *grams.entry(w.to_vec()).or_insert(0) += 1;
                *contexts.entry(w[..order - 1].to_vec()).or_insert(0) += 1;
            }
        }
        Self {
            order,
            alpha,
            vocab,
            contexts,
            grams,
        }
    }

    /// Number of symbols the model can emit.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn probability(&self, context: &[String], next: &str) -> f64 {
        let mut key = context.to_vec();
        key.push(next.to_string());
        let c = self.grams.get(&key).copied().unwrap_or(0) as f64;
        let n = self.contexts.get(context).copied().unwrap_or(0) as f64;
        (c + self.alpha) / (n + self.alpha * self.vocab.len() as f64)
    }

    /// `(prod_i p(w_i | w_{i-n+1..i-1}))^(-1/T)`, taken through logs.
    pub fn perplexity(&self, s: &str) -> f64 {
        let tokens = lm_tokens(s)
            .into_iter()
            .map(|t| if self.vocab.contains(&t) { t } else { UNK.to_string() })
            .collect();
        let seq = padded(self.order, tokens);
        let windows: Vec<&[String]> = seq.windows(self.order).collect();
        let log_sum: f64 = windows
            .iter()
            .map(|w| self.probability(&w[..self.order - 1], &w[self.order - 1]).ln())
            .sum();
        (-log_sum / windows.len() as f64).exp()
    }
}

/// Non-blank code lines with trailing whitespace removed.
pub fn code_lines(code: &str) -> Vec<String> {
    code.lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty())
        .map(String::from)
        .collect()
}

/// Line scores by the definition: for line `i`, the mean perplexity of every
/// variant `j != i` (the code with line `j` deleted). Makes `n * (n - 1)`
/// backend calls.
pub fn double_loop_scores<B: PerplexityBackend + ?Sized>(task: &Task, backend: &B) -> Vec<f64> {
    let lines = code_lines(&task.code);
    let n = lines.len();
    let without = |j: usize| -> String {
        let kept: Vec<&str> = (0..n).filter(|&k| k != j).map(|k| lines[k].as_str()).collect();
        kept.join("\n")
    };
    (0..n)
        .map(|i| {
            let total: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    backend
                        .perplexity(&scoring_input(&task.text, &without(j)))
                        .expect("backend scores")
                })
                .sum();
            total / (n - 1) as f64
        })
        .collect()
}

/// AUROC by comparing every positive with every negative; a tie is worth
/// one half.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> Ratio<u64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(s, _)| *s)
        .collect();
    let half = Ratio::new(1, 2);
    let mut sum = Ratio::from_integer(0u64);
    for p in &pos {
        for n in &neg {
            if p > n {
                sum += 1;
            } else if p == n {
                sum += half;
            }
        }
    }
    sum / (pos.len() * neg.len()) as u64
}
