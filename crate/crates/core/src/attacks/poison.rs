//! Dataset poisoning: choose `round(rate * N)` tasks and insert `k` payloads
//! into each, recording ground truth against the final line view.

use super::ga::Genome;
use super::triggers::{fixed_trigger, grammar_trigger_1, grammar_trigger_2, Comparison, FixedKind, TriggerFamily};
use crate::codetext::split_lines;
use crate::corpus::{Dataset, Task};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("poison rate must be in [0, 1], got {0}")]
    InvalidRate(f64),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("task {0:?} has no code lines")]
    EmptyTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionPolicy {
    /// Uniform over line boundaries from just after the signature to the end.
    #[default]
    UniformInBody,
    /// Immediately after the signature line.
    AfterSignature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonPlan {
    pub rate: f64,
    pub k: usize,
    pub insertion: InsertionPolicy,
    pub seed: u64,
    /// Above this fraction of injected lines a task gets a warning.
    pub warn_fraction: f64,
    pub comparison: Comparison,
}

impl PoisonPlan {
    pub fn new(rate: f64, k: usize, seed: u64) -> Self {
        Self {
            rate,
            k,
            insertion: InsertionPolicy::UniformInBody,
            seed,
            warn_fraction: 0.5,
            comparison: Comparison::GreaterEqual,
        }
    }

    fn validate_rate(&self) -> Result<(), AttackError> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(AttackError::InvalidRate(self.rate));
        }
        Ok(())
    }

    pub fn poisoned_count(&self, n: usize) -> usize {
        ((self.rate * n as f64).round() as usize).min(n)
    }
}

/// Where payloads come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyChoice {
    Family(TriggerFamily),
    /// A fresh family drawn uniformly for every inserted segment.
    Random,
    Evolved(Genome),
}

impl FamilyChoice {
    fn payload(&self, rng: &mut ChaCha8Rng, comparison: Comparison) -> Vec<String> {
        match self {
            FamilyChoice::Family(f) => family_payload(*f, rng, comparison),
            FamilyChoice::Random => {
                let f = TriggerFamily::GENERATED[rng.gen_range(0..TriggerFamily::GENERATED.len())];
                family_payload(f, rng, comparison)
            }
            FamilyChoice::Evolved(g) => g.render(),
        }
    }
}

fn family_payload(family: TriggerFamily, rng: &mut ChaCha8Rng, comparison: Comparison) -> Vec<String> {
    match family {
        TriggerFamily::Fixed1 => fixed_trigger(FixedKind::Fixed1, comparison),
        TriggerFamily::Fixed2 => fixed_trigger(FixedKind::Fixed2, comparison),
        TriggerFamily::Grammar1 | TriggerFamily::Evolved => grammar_trigger_1(rng),
        TriggerFamily::Grammar2 => grammar_trigger_2(rng),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonOutcome {
    pub dataset: Dataset,
    /// Indices (into the task list) of poisoned tasks, ascending.
    pub poisoned: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Deterministic task selection for a plan.
pub fn select_tasks(n: usize, plan: &PoisonPlan) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut picked = sample(&mut rng, n, plan.poisoned_count(n)).into_vec();
    picked.sort_unstable();
    picked
}

/// Per-task RNG streams: one for payload content, one for positions, so
/// positions do not depend on what was inserted.
fn task_rngs(seed: u64, task_index: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut payload = ChaCha8Rng::seed_from_u64(seed);
    payload.set_stream(2 * task_index as u64 + 1);
    let mut position = ChaCha8Rng::seed_from_u64(seed);
    position.set_stream(2 * task_index as u64 + 2);
    (payload, position)
}

pub fn poison_dataset(
    dataset: &Dataset,
    plan: &PoisonPlan,
    choice: &FamilyChoice,
) -> Result<PoisonOutcome, AttackError> {
    if dataset.is_empty() {
        return Err(AttackError::EmptyDataset);
    }
    plan.validate_rate()?;
    let poisoned = select_tasks(dataset.len(), plan);
    if !poisoned.is_empty() && plan.k == 0 {
        return Err(AttackError::InvalidK);
    }
    let mut tasks = dataset.tasks.clone();
    let mut warnings = Vec::new();
    for &i in &poisoned {
        let (task, fraction) = poison_task(&tasks[i], i, plan, choice)?;
        if fraction > plan.warn_fraction {
            warnings.push(format!(
                "task {:?}: injected lines are {:.0}% of the code",
                task.id,
                fraction * 100.0
            ));
        }
        tasks[i] = task;
    }
    let mut out = Dataset {
        tasks,
        meta: dataset.meta.clone(),
    };
    out.refresh_meta();
    Ok(PoisonOutcome {
        dataset: out,
        poisoned,
        warnings,
    })
}

/// Insert `plan.k` payloads into one task. Returns the task and the
/// fraction of its lines that are injected.
pub fn poison_task(
    task: &Task,
    task_index: usize,
    plan: &PoisonPlan,
    choice: &FamilyChoice,
) -> Result<(Task, f64), AttackError> {
    let (mut payload_rng, mut position_rng) = task_rngs(plan.seed, task_index);
    // physical lines with an injected marker; blank lines are kept in place
    let mut lines: Vec<(String, bool)> = task.code.split('\n').map(|l| (l.to_string(), false)).collect();
    let mut truth_before: BTreeSet<usize> = BTreeSet::new();
    if let Some(existing) = &task.injected_lines {
        truth_before.extend(existing.iter().copied());
        let mut view_idx = 0;
        for (text, injected) in &mut lines {
            if text.trim().is_empty() {
                continue;
            }
            *injected = truth_before.contains(&view_idx);
            view_idx += 1;
        }
    }
    for _ in 0..plan.k {
        let payload = choice.payload(&mut payload_rng, plan.comparison);
        let anchors = insertion_anchors(&lines, plan.insertion);
        if anchors.is_empty() {
            return Err(AttackError::EmptyTask(task.id.clone()));
        }
        let anchor = anchors[position_rng.gen_range(0..anchors.len())];
        let indent = insertion_indent(&lines[anchor].0);
        let block = payload.into_iter().map(|l| (format!("{indent}{l}"), true));
        lines.splice(anchor + 1..anchor + 1, block);
    }
    let code = lines.iter().map(|(l, _)| l.as_str()).collect::<Vec<_>>().join("\n");
    let injected: BTreeSet<usize> = lines
        .iter()
        .filter(|(l, _)| !l.trim().is_empty())
        .enumerate()
        .filter(|(_, (_, inj))| *inj)
        .map(|(i, _)| i)
        .collect();
    let total = split_lines(&code).map(|v| v.len()).unwrap_or(1);
    let fraction = injected.len() as f64 / total as f64;
    Ok((
        Task {
            id: task.id.clone(),
            text: task.text.clone(),
            code,
            poisoned: Some(true),
            injected_lines: Some(injected),
        },
        fraction,
    ))
}

/// Physical-line indices after which a payload may go: non-blank lines at
/// or after the function signature.
fn insertion_anchors(lines: &[(String, bool)], policy: InsertionPolicy) -> Vec<usize> {
    let signature = lines.iter().position(|(l, _)| {
        let t = l.trim_start();
        t.starts_with("def ") || t.starts_with("async def ")
    });
    match (policy, signature) {
        (InsertionPolicy::AfterSignature, Some(s)) => vec![s],
        _ => {
            let from = signature.unwrap_or(0);
            (from..lines.len()).filter(|&i| !lines[i].0.trim().is_empty()).collect()
        }
    }
}

/// Indentation for a statement placed after `prev`: the same as `prev`, one
/// level deeper if `prev` opens a block.
fn insertion_indent(prev: &str) -> String {
    let base: String = prev.chars().take_while(|c| c.is_whitespace()).collect();
    let opens_block = prev.split('#').next().unwrap_or("").trim_end().ends_with(':');
    if opens_block {
        format!("{base}    ")
    } else {
        base
    }
}
