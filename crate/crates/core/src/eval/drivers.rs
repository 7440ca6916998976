use super::metrics::{self, Averaging, LineSets, Localization, MetricError, Prf, RocPoint};
use crate::corpus::{match_reports, CorpusError, Dataset, DetectionReport};
use crate::detector::{DetectError, Detector};
use crate::exec::{with_workers, Execution};
use crate::lm::BackendDescriptor;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("dataset has no ground truth for task {0:?}")]
    NoGroundTruth(String),
    #[error("threshold grid is empty")]
    EmptyGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub tasks: usize,
    pub poisoned: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the dataset holds a single class.
    pub auroc: Option<f64>,
    /// `None` when no task is poisoned.
    pub localization: Option<Localization>,
}

/// Ground-truth labels and reports aligned by task id.
pub fn evaluate(
    dataset: &Dataset,
    reports: &[DetectionReport],
    averaging: Averaging,
) -> Result<EvalSummary, EvalError> {
    let pairs = match_reports(dataset, reports)?;
    let mut truth = Vec::with_capacity(pairs.len());
    for (task, _) in &pairs {
        truth.push(task.poisoned.ok_or_else(|| EvalError::NoGroundTruth(task.id.clone()))?);
    }
    let verdicts: Vec<bool> = pairs.iter().map(|(_, r)| r.verdict).collect();
    let scores: Vec<f64> = pairs.iter().map(|(_, r)| r.task_score).collect();
    let Prf { precision, recall, f1 } = metrics::f1(&verdicts, &truth)?;
    let auroc = match metrics::auroc(&scores, &truth) {
        Ok(a) => Some(a),
        Err(MetricError::SingleClass { .. }) => None,
        Err(e) => return Err(e.into()),
    };

    // Tasks marked poisoned without line labels count for F1 but not localization.
    let sets: Vec<LineSets<'_>> = pairs
        .iter()
        .filter(|(t, _)| t.is_poisoned())
        .filter_map(|(t, r)| t.injected_lines.as_ref().map(|inj| (t, r, inj)))
        .map(|(t, r, inj)| {
            let lines = t
                .line_view()
                .map_err(|e| CorpusError::ReportMismatch(format!("task {:?}: {e}", t.id)))?
                .len();
            Ok(LineSets {
                task_id: &t.id,
                flagged: &r.flagged_lines,
                injected: inj,
                lines,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    let localization = if sets.is_empty() {
        None
    } else {
        Some(metrics::localization(&sets, averaging)?)
    };

    Ok(EvalSummary {
        tasks: pairs.len(),
        poisoned: truth.iter().filter(|t| **t).count(),
        precision,
        recall,
        f1,
        auroc,
        localization,
    })
}

pub fn roc_curve(dataset: &Dataset, reports: &[DetectionReport]) -> Result<Vec<RocPoint>, EvalError> {
    let pairs = match_reports(dataset, reports)?;
    let mut truth = Vec::with_capacity(pairs.len());
    for (task, _) in &pairs {
        truth.push(task.poisoned.ok_or_else(|| EvalError::NoGroundTruth(task.id.clone()))?);
    }
    let scores: Vec<f64> = pairs.iter().map(|(_, r)| r.task_score).collect();
    Ok(metrics::roc_points(&scores, &truth)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub loc_precision: Option<f64>,
    pub loc_recall: Option<f64>,
}

/// Thresholds 0.5, 0.6, ..., 3.0.
pub fn default_grid() -> Vec<f64> {
    (5..=30).map(|i| i as f64 / 10.0).collect()
}

/// Score every task once, then re-threshold the cached scores for each grid point.
pub fn sweep_threshold(
    detector: &Detector<'_>,
    dataset: &Dataset,
    grid: &[f64],
    averaging: Averaging,
    exec: Execution,
) -> Result<Vec<SweepPoint>, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let scores = detector.score_all(&dataset.tasks, exec)?;
    grid.iter()
        .map(|&threshold| {
            let reports: Vec<DetectionReport> = scores
                .iter()
                .zip(&dataset.tasks)
                .map(|(s, t)| s.report(&t.id, threshold, detector.kind()))
                .collect();
            let summary = evaluate(dataset, &reports, averaging)?;
            Ok(SweepPoint {
                threshold,
                precision: summary.precision,
                recall: summary.recall,
                f1: summary.f1,
                loc_precision: summary.localization.as_ref().map(|l| l.precision),
                loc_recall: summary.localization.as_ref().map(|l| l.recall),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub tasks: usize,
    pub elapsed_secs: f64,
    pub tasks_per_minute: f64,
    pub workers: Option<usize>,
    pub execution: Execution,
    pub backend: BackendDescriptor,
}

/// Wall-clock detection rate over `dataset`.
pub fn throughput(
    detector: &Detector<'_>,
    dataset: &Dataset,
    exec: Execution,
    workers: Option<usize>,
) -> Result<(Throughput, Vec<DetectionReport>), EvalError> {
    let start = Instant::now();
    let reports = with_workers(exec, workers, || detector.detect_all(&dataset.tasks, exec))?;
    let elapsed = start.elapsed().max(Duration::from_nanos(1));
    let secs = elapsed.as_secs_f64();
    Ok((
        Throughput {
            tasks: dataset.len(),
            elapsed_secs: secs,
            tasks_per_minute: dataset.len() as f64 * 60.0 / secs,
            workers,
            execution: exec.effective(),
            backend: detector.backend().descriptor(),
        },
        reports,
    ))
}

pub fn write_sweep_csv(points: &[SweepPoint], out: impl Write) -> Result<(), csv::Error> {
    write_csv(points, out)
}

pub fn write_roc_csv(points: &[RocPoint], out: impl Write) -> Result<(), csv::Error> {
    write_csv(points, out)
}

fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
