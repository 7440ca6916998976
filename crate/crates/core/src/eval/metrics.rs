//! Detection metrics: task-level F1, line localization, AUROC.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("AUROC needs both classes (got {positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("score {index} is NaN")]
    NanScore { index: usize },
    #[error("poisoned task {task_id:?} has no injected lines")]
    MissingInjected { task_id: String },
    #[error("task {task_id:?}: line index out of range for {lines} lines")]
    LineOutOfRange { task_id: String, lines: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision/recall/F1 from confusion counts; undefined ratios are 0.
pub fn confusion_f1(tp: usize, fp: usize, fn_: usize) -> Prf {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f1 }
}

/// Poisoned is the positive class.
pub fn f1(verdicts: &[bool], truth: &[bool]) -> Result<Prf, MetricError> {
    if verdicts.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            left: verdicts.len(),
            right: truth.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&v, &t) in verdicts.iter().zip(truth) {
        match (v, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(confusion_f1(tp, fp, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Pool counts over all poisoned tasks.
    #[default]
    Micro,
    /// Mean of per-task ratios.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub precision: f64,
    pub recall: f64,
    /// Fraction of lines in poisoned tasks whose flagged/unflagged state
    /// matches the ground truth.
    pub accuracy: f64,
    pub poisoned_tasks: usize,
    /// Poisoned tasks with no flagged line at all.
    pub unflagged_tasks: usize,
    pub averaging: Averaging,
}

/// One poisoned task's flagged and injected lines.
#[derive(Debug, Clone, Copy)]
pub struct LineSets<'a> {
    pub task_id: &'a str,
    pub flagged: &'a BTreeSet<usize>,
    pub injected: &'a BTreeSet<usize>,
    /// Number of code lines in the task.
    pub lines: usize,
}

pub fn localization(tasks: &[LineSets<'_>], averaging: Averaging) -> Result<Localization, MetricError> {
    if let Some(bad) = tasks.iter().find(|t| t.injected.is_empty()) {
        return Err(MetricError::MissingInjected {
            task_id: bad.task_id.to_string(),
        });
    }
    if let Some(bad) = tasks
        .iter()
        .find(|t| t.flagged.iter().chain(t.injected).any(|&i| i >= t.lines))
    {
        return Err(MetricError::LineOutOfRange {
            task_id: bad.task_id.to_string(),
            lines: bad.lines,
        });
    }
    let unflagged_tasks = tasks.iter().filter(|t| t.flagged.is_empty()).count();
    let hits = |t: &LineSets<'_>| t.flagged.intersection(t.injected).count();
    let correct = |t: &LineSets<'_>| t.lines - t.flagged.symmetric_difference(t.injected).count();
    let (precision, recall, accuracy) = match averaging {
        Averaging::Micro => {
            let hit: usize = tasks.iter().map(hits).sum();
            let flagged: usize = tasks.iter().map(|t| t.flagged.len()).sum();
            let injected: usize = tasks.iter().map(|t| t.injected.len()).sum();
            let lines: usize = tasks.iter().map(|t| t.lines).sum();
            let right: usize = tasks.iter().map(correct).sum();
            (ratio(hit, flagged), ratio(hit, injected), ratio(right, lines))
        }
        Averaging::Macro => {
            let flagged_tasks: Vec<_> = tasks.iter().filter(|t| !t.flagged.is_empty()).collect();
            let p = if flagged_tasks.is_empty() {
                0.0
            } else {
                flagged_tasks
                    .iter()
                    .map(|t| ratio(hits(t), t.flagged.len()))
                    .sum::<f64>()
                    / flagged_tasks.len() as f64
            };
            let r = if tasks.is_empty() {
                0.0
            } else {
                tasks.iter().map(|t| ratio(hits(t), t.injected.len())).sum::<f64>() / tasks.len() as f64
            };
            let a = if tasks.is_empty() {
                0.0
            } else {
                tasks.iter().map(|t| ratio(correct(t), t.lines)).sum::<f64>() / tasks.len() as f64
            };
            (p, r, a)
        }
    };
    Ok(Localization {
        precision,
        recall,
        accuracy,
        poisoned_tasks: tasks.len(),
        unflagged_tasks,
        averaging,
    })
}

/// AUROC as an exact fraction `numerator / denominator`, where the
/// numerator counts half-wins: 2 per positive-over-negative pair, 1 per tie.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AurocFraction {
    pub numerator: u64,
    pub denominator: u64,
}

impl AurocFraction {
    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

/// Rank statistic `P(s+ > s-) + P(s+ = s-)/2`, computed by sorting once.
pub fn auroc_fraction(scores: &[f64], labels: &[bool]) -> Result<AurocFraction, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if let Some(index) = scores.iter().position(|s| s.is_nan()) {
        return Err(MetricError::NanScore { index });
    }
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut numerator = 0u64;
    let mut negatives_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        numerator += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        i = j;
    }
    Ok(AurocFraction {
        numerator,
        denominator: 2 * positives as u64 * negatives as u64,
    })
}

pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    auroc_fraction(scores, labels).map(|f| f.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from the highest score down, starting at (0, 0).
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>, MetricError> {
    auroc_fraction(scores, labels)?;
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: ratio(fp, negatives),
            tpr: ratio(tp, positives),
        });
    }
    Ok(points)
}
