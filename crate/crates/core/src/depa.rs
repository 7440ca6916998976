//! Line-level perplexity detection.
//!
//! For a task with `n` code lines, variant `j` is the code with line `j`
//! removed. Each variant is scored once as `PPL(text + variant)`. A line's
//! score is the mean over the `n - 1` variants that keep it. Scores are
//! optionally squared, then a line is flagged when its score exceeds the
//! file mean by more than `T` population standard deviations.

use crate::codetext::{CodeTextError, LineView};
use crate::corpus::{DetectionReport, Task};
use crate::exec::{try_map_ordered, Execution};
use crate::lm::{scoring_input, LmError, PerplexityBackend};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::time::Instant;
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 1.5;

pub const TOO_SHORT_NOTE: &str = "too short to score: fewer than 2 code lines";
pub const TRUNCATED_NOTE: &str = "prompt truncated from the left by the backend client";

#[derive(Debug, Error)]
pub enum DepaError {
    #[error(transparent)]
    Code(#[from] CodeTextError),
    #[error("need at least 2 code lines, got {0}")]
    TooShort(usize),
    #[error("line index {index} out of range for {len} lines")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("scoring variant {variant}")]
    Backend {
        variant: usize,
        #[source]
        source: LmError,
    },
}

impl DepaError {
    pub fn backend_error(&self) -> Option<&LmError> {
        match self {
            DepaError::Backend { source, .. } => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreTransform {
    /// Square each line score before thresholding.
    #[default]
    Square,
    Identity,
}

impl ScoreTransform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ScoreTransform::Square => x * x,
            ScoreTransform::Identity => x,
        }
    }
}

/// The code with line `i` removed, remaining lines joined by `\n`.
pub fn variant(lines: &LineView, i: usize) -> Result<String, DepaError> {
    if lines.len() < 2 {
        return Err(DepaError::TooShort(lines.len()));
    }
    if i >= lines.len() {
        return Err(DepaError::IndexOutOfRange {
            index: i,
            len: lines.len(),
        });
    }
    Ok(lines.join_except(Some(i)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineScore {
    pub index: usize,
    pub ppl_line: f64,
    pub transformed: f64,
    pub z: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineScoreTable {
    pub rows: Vec<LineScore>,
    pub mu: f64,
    pub sigma: f64,
    /// `None` until [`flag_lines`] has run.
    pub threshold: Option<f64>,
    pub transform: ScoreTransform,
    /// Some backend call saw a left-truncated prompt.
    pub truncated: bool,
}

impl LineScoreTable {
    pub fn ppl_lines(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ppl_line).collect()
    }

    pub fn flagged_lines(&self) -> BTreeSet<usize> {
        self.rows.iter().filter(|r| r.flagged).map(|r| r.index).collect()
    }

    /// Largest z-score; 0 when the spread is zero.
    pub fn max_z(&self) -> f64 {
        self.rows.iter().map(|r| r.z).fold(0.0_f64, f64::max)
    }

    fn from_ppl(ppl: Vec<f64>, truncated: bool) -> Self {
        let rows = ppl
            .into_iter()
            .enumerate()
            .map(|(index, ppl_line)| LineScore {
                index,
                ppl_line,
                transformed: ppl_line,
                z: 0.0,
                flagged: false,
            })
            .collect();
        let mut table = Self {
            rows,
            mu: 0.0,
            sigma: 0.0,
            threshold: None,
            transform: ScoreTransform::Identity,
            truncated,
        };
        table.restat(ScoreTransform::Identity, None);
        table
    }

    fn restat(&mut self, transform: ScoreTransform, threshold: Option<f64>) {
        for r in &mut self.rows {
            r.transformed = transform.apply(r.ppl_line);
        }
        let values: Vec<f64> = self.rows.iter().map(|r| r.transformed).collect();
        let (mu, sigma) = mean_std(&values);
        for r in &mut self.rows {
            let dev = r.transformed - mu;
            r.z = if sigma > 0.0 { dev / sigma } else { 0.0 };
            r.flagged = threshold.is_some_and(|t| dev > t * sigma);
        }
        self.mu = mu;
        self.sigma = sigma;
        self.transform = transform;
        self.threshold = threshold;
    }
}

/// Mean and population standard deviation. The mean is taken as an offset
/// from the first value, so a constant input yields exactly zero spread.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let base = values[0];
    let mu = base + values.iter().map(|v| v - base).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// `PPL(text + code(j))` for every line `j`, in index order.
pub fn variant_perplexities<B: PerplexityBackend + ?Sized>(
    task: &Task,
    lines: &LineView,
    backend: &B,
    exec: Execution,
) -> Result<(Vec<f64>, bool), DepaError> {
    if lines.len() < 2 {
        return Err(DepaError::TooShort(lines.len()));
    }
    let indices: Vec<usize> = (0..lines.len()).collect();
    let evals = try_map_ordered(exec, &indices, |_, &j| {
        let input = scoring_input(&task.text, &lines.join_except(Some(j)));
        backend
            .evaluate(&input)
            .map_err(|source| DepaError::Backend { variant: j, source })
    })?;
    let truncated = evals.iter().any(|e| e.truncated);
    Ok((evals.into_iter().map(|e| e.perplexity).collect(), truncated))
}

/// Per-line scores by accumulation: each variant's perplexity is added to
/// every line the variant keeps, then each line's sum is divided by its
/// count (always `n - 1`).
pub fn accumulate_line_scores(variant_ppl: &[f64]) -> Vec<f64> {
    let n = variant_ppl.len();
    let mut value = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (removed, &ppl) in variant_ppl.iter().enumerate() {
        for line in (0..n).filter(|&l| l != removed) {
            value[line] += ppl;
            count[line] += 1;
        }
    }
    value.iter().zip(&count).map(|(v, &c)| v / c as f64).collect()
}

/// Score every line of `task`. Issues exactly `n` backend calls. The
/// returned table has no flags yet; see [`flag_lines`].
pub fn line_scores<B: PerplexityBackend + ?Sized>(task: &Task, backend: &B) -> Result<LineScoreTable, DepaError> {
    line_scores_with(task, backend, Execution::Sequential)
}

/// [`line_scores`] with the `n` variant evaluations run under `exec`.
pub fn line_scores_with<B: PerplexityBackend + ?Sized>(
    task: &Task,
    backend: &B,
    exec: Execution,
) -> Result<LineScoreTable, DepaError> {
    let lines = task.line_view()?;
    let (ppl, truncated) = variant_perplexities(task, &lines, backend, exec)?;
    Ok(LineScoreTable::from_ppl(accumulate_line_scores(&ppl), truncated))
}

/// Apply `transform`, recompute mean/std over the transformed scores, and
/// flag rows with `transformed - mu > threshold * sigma`.
pub fn flag_lines(table: &LineScoreTable, threshold: f64, transform: ScoreTransform) -> LineScoreTable {
    let mut out = table.clone();
    out.restat(transform, Some(threshold));
    out
}

/// Report for a flagged table.
pub fn report_from_table(task_id: &str, table: &LineScoreTable) -> DetectionReport {
    let flagged_lines = table.flagged_lines();
    DetectionReport {
        task_id: task_id.to_string(),
        verdict: !flagged_lines.is_empty(),
        flagged_lines,
        task_score: table.max_z(),
        elapsed_ms: 0.0,
        note: table.truncated.then(|| TRUNCATED_NOTE.to_string()),
    }
}

pub fn too_short_report(task_id: &str) -> DetectionReport {
    DetectionReport {
        task_id: task_id.to_string(),
        verdict: false,
        flagged_lines: BTreeSet::new(),
        task_score: 0.0,
        elapsed_ms: 0.0,
        note: Some(TOO_SHORT_NOTE.to_string()),
    }
}

/// Score, flag, and report one task. Single-line tasks come back unflagged
/// with a note instead of an error.
pub fn detect<B: PerplexityBackend + ?Sized>(
    task: &Task,
    backend: &B,
    threshold: f64,
    transform: ScoreTransform,
) -> Result<DetectionReport, DepaError> {
    let start = Instant::now();
    let mut report = match line_scores(task, backend) {
        Ok(table) => report_from_table(&task.id, &flag_lines(&table, threshold, transform)),
        Err(DepaError::TooShort(_)) => too_short_report(&task.id),
        Err(e) => return Err(e),
    };
    report.set_elapsed(start.elapsed());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codetext::split_lines;
    use crate::lm::{BackendDescriptor, Evaluation};

    struct Constant(f64);

    impl PerplexityBackend for Constant {
        fn descriptor(&self) -> BackendDescriptor {
            BackendDescriptor::Other {
                name: "constant".into(),
            }
        }
        fn evaluate(&self, _: &str) -> Result<Evaluation, LmError> {
            Ok(Evaluation::plain(self.0))
        }
    }

    fn table(scores: &[f64]) -> LineScoreTable {
        LineScoreTable::from_ppl(scores.to_vec(), false)
    }

    #[test]
    fn variant_minimal_and_five_lines() {
        let two = split_lines("first\nsecond").unwrap();
        assert_eq!(variant(&two, 0).unwrap(), "second");
        let five = split_lines("def f(x):\n    a = x\n    b = a\n    c = b\n    return c").unwrap();
        assert_eq!(
            variant(&five, 2).unwrap(),
            "def f(x):\n    a = x\n    c = b\n    return c"
        );
        assert!(matches!(variant(&five, 5), Err(DepaError::IndexOutOfRange { .. })));
        let one = split_lines("x").unwrap();
        assert!(matches!(variant(&one, 0), Err(DepaError::TooShort(1))));
    }

    #[test]
    fn hand_computed_flags() {
        // mu = 3.25, sigma = sqrt(15.1875) ~ 3.897; 10 - 3.25 = 6.75 > 1.5 * 3.897
        let t = flag_lines(&table(&[1.0, 1.0, 1.0, 10.0]), 1.5, ScoreTransform::Identity);
        assert_eq!(t.mu, 3.25);
        assert!((t.sigma - 15.1875f64.sqrt()).abs() < 1e-12);
        assert_eq!(t.flagged_lines(), [3].into_iter().collect());
    }

    #[test]
    fn equal_scores_flag_nothing() {
        for transform in [ScoreTransform::Square, ScoreTransform::Identity] {
            let t = flag_lines(&table(&[0.1, 0.1, 0.1, 0.1, 0.1]), 0.01, transform);
            assert_eq!(t.sigma, 0.0);
            assert!(t.flagged_lines().is_empty());
        }
    }

    #[test]
    fn constant_backend_gives_constant_scores() {
        let task = Task::new("t", "sum", "a = 1\nb = 2\nc = a + b\nprint(c)");
        let t = line_scores(&task, &Constant(0.7)).unwrap();
        let first = t.rows[0].ppl_line;
        assert!(t.rows.iter().all(|r| r.ppl_line == first));
        let r = detect(&task, &Constant(0.7), DEFAULT_THRESHOLD, ScoreTransform::Square).unwrap();
        assert!(!r.verdict);
        assert_eq!(r.task_score, 0.0);
    }

    #[test]
    fn two_lines_each_score_is_the_other_variant() {
        struct ByLen;
        impl PerplexityBackend for ByLen {
            fn descriptor(&self) -> BackendDescriptor {
                BackendDescriptor::Other { name: "len".into() }
            }
            fn evaluate(&self, s: &str) -> Result<Evaluation, LmError> {
                Ok(Evaluation::plain(s.len() as f64))
            }
        }
        let task = Task::new("t", "", "ab\ncdef");
        let t = line_scores(&task, &ByLen).unwrap();
        // line 0 is kept only by the variant removing line 1 ("ab")
        assert_eq!(t.ppl_lines(), vec![2.0, 4.0]);
    }

    #[test]
    fn single_line_task_has_note() {
        let r = detect(
            &Task::new("t", "", "return 1"),
            &Constant(2.0),
            1.5,
            ScoreTransform::Square,
        )
        .unwrap();
        assert!(!r.verdict);
        assert_eq!(r.note.as_deref(), Some(TOO_SHORT_NOTE));
    }

    #[test]
    fn infinite_threshold_never_flags() {
        let t = flag_lines(&table(&[1.0, 2.0, 50.0, 3.0]), f64::INFINITY, ScoreTransform::Square);
        assert!(t.flagged_lines().is_empty());
    }

    #[test]
    fn accumulation_counts() {
        let s = accumulate_line_scores(&[1.0, 2.0, 3.0]);
        assert_eq!(s, vec![2.5, 2.0, 1.5]);
    }
}
