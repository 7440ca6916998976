//! One entry point over both detectors, with scoring split from
//! thresholding so threshold sweeps reuse backend work.

use crate::corpus::{DetectionReport, Task};
use crate::depa::{self, DepaError, LineScoreTable, ScoreTransform};
use crate::exec::{try_map_ordered, Execution};
use crate::lm::{LmError, PerplexityBackend};
use crate::onion::{self, OnionError, TokenScoreTable, TokenizerStrategy};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

pub const TOO_FEW_TOKENS_NOTE: &str = "too short to score: fewer than 2 tokens";

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("task {task_id:?}")]
    Depa {
        task_id: String,
        #[source]
        source: DepaError,
    },
    #[error("task {task_id:?}")]
    Onion {
        task_id: String,
        #[source]
        source: OnionError,
    },
}

impl DetectError {
    pub fn backend_error(&self) -> Option<&LmError> {
        match self {
            DetectError::Depa { source, .. } => source.backend_error(),
            DetectError::Onion { source, .. } => source.backend_error(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "detector", rename_all = "snake_case")]
pub enum DetectorKind {
    Depa { transform: ScoreTransform },
    Onion { tokenizer: TokenizerStrategy },
}

impl Default for DetectorKind {
    fn default() -> Self {
        DetectorKind::Depa {
            transform: ScoreTransform::Square,
        }
    }
}

/// Threshold-independent scores for one task.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskScores {
    Lines(LineScoreTable),
    Tokens(TokenScoreTable),
    TooShort(&'static str),
}

impl TaskScores {
    pub fn report(&self, task_id: &str, threshold: f64, kind: DetectorKind) -> DetectionReport {
        match (self, kind) {
            (TaskScores::Lines(table), DetectorKind::Depa { transform }) => {
                depa::report_from_table(task_id, &depa::flag_lines(table, threshold, transform))
            }
            (TaskScores::Lines(table), DetectorKind::Onion { .. }) => {
                depa::report_from_table(task_id, &depa::flag_lines(table, threshold, ScoreTransform::Identity))
            }
            (TaskScores::Tokens(table), _) => table.flag(threshold).report(task_id),
            (TaskScores::TooShort(note), _) => {
                let mut r = depa::too_short_report(task_id);
                r.note = Some(note.to_string());
                r
            }
        }
    }
}

/// Detector over a borrowed backend.
#[derive(Clone, Copy)]
pub struct Detector<'a> {
    backend: &'a dyn PerplexityBackend,
    kind: DetectorKind,
    threshold: f64,
}

impl<'a> Detector<'a> {
    pub fn new(backend: &'a dyn PerplexityBackend, kind: DetectorKind, threshold: f64) -> Self {
        Self {
            backend,
            kind,
            threshold,
        }
    }

    pub fn depa(backend: &'a dyn PerplexityBackend) -> Self {
        Self::new(backend, DetectorKind::default(), depa::DEFAULT_THRESHOLD)
    }

    pub fn onion(backend: &'a dyn PerplexityBackend, tokenizer: TokenizerStrategy) -> Self {
        Self::new(backend, DetectorKind::Onion { tokenizer }, depa::DEFAULT_THRESHOLD)
    }

    pub fn with_threshold(self, threshold: f64) -> Self {
        Self { threshold, ..self }
    }

    pub fn kind(&self) -> DetectorKind {
        self.kind
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn backend(&self) -> &'a dyn PerplexityBackend {
        self.backend
    }

    pub fn score(&self, task: &Task) -> Result<TaskScores, DetectError> {
        match self.kind {
            DetectorKind::Depa { .. } => match depa::line_scores(task, self.backend) {
                Ok(t) => Ok(TaskScores::Lines(t)),
                Err(DepaError::TooShort(_)) => Ok(TaskScores::TooShort(depa::TOO_SHORT_NOTE)),
                Err(source) => Err(DetectError::Depa {
                    task_id: task.id.clone(),
                    source,
                }),
            },
            DetectorKind::Onion { tokenizer } => match onion::token_suspicion(task, self.backend, tokenizer) {
                Ok(t) => Ok(TaskScores::Tokens(t)),
                Err(OnionError::TooFewTokens(_)) => Ok(TaskScores::TooShort(TOO_FEW_TOKENS_NOTE)),
                Err(source) => Err(DetectError::Onion {
                    task_id: task.id.clone(),
                    source,
                }),
            },
        }
    }

    pub fn detect(&self, task: &Task) -> Result<DetectionReport, DetectError> {
        let start = Instant::now();
        let mut report = self.score(task)?.report(&task.id, self.threshold, self.kind);
        report.set_elapsed(start.elapsed());
        Ok(report)
    }

    /// Reports for every task, in input order.
    pub fn detect_all(&self, tasks: &[Task], exec: Execution) -> Result<Vec<DetectionReport>, DetectError> {
        try_map_ordered(exec, tasks, |_, t| self.detect(t))
    }

    pub fn score_all(&self, tasks: &[Task], exec: Execution) -> Result<Vec<TaskScores>, DetectError> {
        try_map_ordered(exec, tasks, |_, t| self.score(t))
    }
}

/// Anything that turns a task into a report; the attack search takes one.
pub trait TaskDetector: Sync {
    fn detect_task(&self, task: &Task) -> Result<DetectionReport, DetectError>;
}

impl TaskDetector for Detector<'_> {
    fn detect_task(&self, task: &Task) -> Result<DetectionReport, DetectError> {
        self.detect(task)
    }
}
