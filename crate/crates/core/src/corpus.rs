//! Task datasets and detection reports, persisted as JSONL.
//!
//! Dataset record: `{"id", "text", "code", "poisoned"?, "injected_lines"?}`.
//! `injected_lines` index the segmented [`LineView`] (blank lines removed),
//! not physical lines.
//!
//! Report record: `{"task_id", "verdict", "flagged_lines", "task_score",
//! "elapsed_ms", "note"?}` with `flagged_lines` sorted ascending.

use crate::codetext::{split_lines, LineView};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: record is missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: task {id:?} has empty code")]
    EmptyCode { line: usize, id: String },
    #[error("line {line}: duplicate task id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: task {id:?}: {message}")]
    InvalidGroundTruth { line: usize, id: String, message: String },
    #[error("reports do not match dataset: {0}")]
    ReportMismatch(String),
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub text: String,
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisoned: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected_lines: Option<BTreeSet<usize>>,
}

impl Task {
    pub fn new(id: impl Into<String>, text: impl Into<String>, code: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            code: code.into(),
            poisoned: None,
            injected_lines: None,
        }
    }

    pub fn line_view(&self) -> Result<LineView, crate::codetext::CodeTextError> {
        split_lines(&self.code)
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned == Some(true)
    }

    /// Check the record invariants. Returns a message on violation.
    pub fn validate(&self) -> Result<(), String> {
        let view = self.line_view().map_err(|e| e.to_string())?;
        if let Some(lines) = &self.injected_lines {
            if let Some(bad) = lines.iter().find(|&&i| i >= view.len()) {
                return Err(format!(
                    "injected line {bad} out of range for {} code lines",
                    view.len()
                ));
            }
            match (self.poisoned, lines.is_empty()) {
                (Some(true), true) => return Err("poisoned but injected_lines is empty".into()),
                (Some(false) | None, false) => {
                    return Err("injected_lines given but task is not marked poisoned".into())
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub format: String,
    /// Fraction of tasks with `poisoned: true`, when any ground truth exists.
    pub poison_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tasks: Vec<Task>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(name: impl Into<String>, tasks: Vec<Task>) -> Self {
        let meta = DatasetMeta {
            name: name.into(),
            format: "jsonl".into(),
            poison_rate: poison_rate(&tasks),
        };
        Self { tasks, meta }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn refresh_meta(&mut self) {
        self.meta.poison_rate = poison_rate(&self.tasks);
    }

    pub fn poisoned_count(&self) -> usize {
        self.tasks.iter().filter(|t| t.is_poisoned()).count()
    }
}

fn poison_rate(tasks: &[Task]) -> Option<f64> {
    if tasks.is_empty() || tasks.iter().all(|t| t.poisoned.is_none()) {
        return None;
    }
    let n = tasks.iter().filter(|t| t.is_poisoned()).count();
    Some(n as f64 / tasks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    #[default]
    Jsonl,
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset, CorpusError> {
    let DatasetFormat::Jsonl = format;
    let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let name = path
        .file_stem()
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    let tasks = parse_tasks(BufReader::new(file)).map_err(|e| match e {
        ParseFailure::Io(source) => CorpusError::io(path, source),
        ParseFailure::Record(err) => err,
    })?;
    Ok(Dataset::new(name, tasks))
}

enum ParseFailure {
    Io(io::Error),
    Record(CorpusError),
}

impl From<CorpusError> for ParseFailure {
    fn from(e: CorpusError) -> Self {
        ParseFailure::Record(e)
    }
}

fn parse_tasks(reader: impl BufRead) -> Result<Vec<Task>, ParseFailure> {
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(ParseFailure::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let task = parse_task(&line, lineno, tasks.len() + 1)?;
        if !seen.insert(task.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: lineno,
                id: task.id,
            }
            .into());
        }
        tasks.push(task);
    }
    Ok(tasks)
}

/// Parse one JSONL record. A numeric id is accepted and stringified; a
/// missing id defaults to the record's ordinal.
pub fn parse_task(line: &str, lineno: usize, ordinal: usize) -> Result<Task, CorpusError> {
    let malformed = |message: String| CorpusError::Malformed { line: lineno, message };
    let value: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("record is not a JSON object".into()))?;
    let field_str = |field: &'static str| -> Result<String, CorpusError> {
        match obj.get(field) {
            None | Some(Value::Null) => Err(CorpusError::MissingField { line: lineno, field }),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(malformed(format!("`{field}` must be a string"))),
        }
    };
    let id = match obj.get("id") {
        None | Some(Value::Null) => ordinal.to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => return Err(malformed("`id` must be a string or number".into())),
    };
    let text = field_str("text")?;
    let code = field_str("code")?;
    if code.trim().is_empty() {
        return Err(CorpusError::EmptyCode { line: lineno, id });
    }
    let poisoned = match obj.get("poisoned") {
        None | Some(Value::Null) => None,
        Some(Value::Bool(b)) => Some(*b),
        Some(_) => return Err(malformed("`poisoned` must be a boolean".into())),
    };
    let injected_lines = match obj.get("injected_lines") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            serde_json::from_value::<BTreeSet<usize>>(v.clone())
                .map_err(|e| malformed(format!("`injected_lines`: {e}")))?,
        ),
    };
    let task = Task {
        id,
        text,
        code,
        poisoned,
        injected_lines,
    };
    task.validate().map_err(|message| CorpusError::InvalidGroundTruth {
        line: lineno,
        id: task.id.clone(),
        message,
    })?;
    Ok(task)
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| CorpusError::io(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), CorpusError> {
    write_jsonl(&dataset.tasks, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub task_id: String,
    pub verdict: bool,
    pub flagged_lines: BTreeSet<usize>,
    /// Continuous anomaly score for ROC analysis.
    pub task_score: f64,
    pub elapsed_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl DetectionReport {
    pub fn elapsed(&self) -> Duration {
        Duration::from_secs_f64(self.elapsed_ms.max(0.0) / 1000.0)
    }

    pub fn set_elapsed(&mut self, d: Duration) {
        self.elapsed_ms = d.as_secs_f64() * 1000.0;
    }
}

pub fn save_reports(reports: &[DetectionReport], path: &Path) -> Result<(), CorpusError> {
    write_jsonl(reports, path)
}

pub fn load_reports(path: &Path) -> Result<Vec<DetectionReport>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let r: DetectionReport = serde_json::from_str(l).map_err(|e| CorpusError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            if r.verdict == r.flagged_lines.is_empty() || !r.task_score.is_finite() {
                return Err(CorpusError::Malformed {
                    line: i + 1,
                    message: "verdict must match flagged_lines and task_score must be finite".into(),
                });
            }
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanseMode {
    #[default]
    DropTask,
    StripLines,
}

/// Pair each task with its report by id.
pub fn match_reports<'a>(
    dataset: &'a Dataset,
    reports: &'a [DetectionReport],
) -> Result<Vec<(&'a Task, &'a DetectionReport)>, CorpusError> {
    if reports.len() != dataset.len() {
        return Err(CorpusError::ReportMismatch(format!(
            "{} reports for {} tasks",
            reports.len(),
            dataset.len()
        )));
    }
    let by_id: HashMap<&str, &DetectionReport> = reports.iter().map(|r| (r.task_id.as_str(), r)).collect();
    dataset
        .tasks
        .iter()
        .map(|t| {
            by_id
                .get(t.id.as_str())
                .map(|r| (t, *r))
                .ok_or_else(|| CorpusError::ReportMismatch(format!("no report for task {:?}", t.id)))
        })
        .collect()
}

/// Remove detected poison. `DropTask` removes every task with a positive
/// verdict; `StripLines` deletes the flagged lines and keeps the task (a task
/// whose every line is flagged is dropped). Surviving lines are byte-equal to
/// the input.
pub fn cleanse(dataset: &Dataset, reports: &[DetectionReport], mode: CleanseMode) -> Result<Dataset, CorpusError> {
    let pairs = match_reports(dataset, reports)?;
    let mut tasks = Vec::with_capacity(dataset.len());
    for (task, report) in pairs {
        if !report.verdict {
            tasks.push(task.clone());
            continue;
        }
        if mode == CleanseMode::DropTask {
            continue;
        }
        if let Some(stripped) = strip_lines(task, &report.flagged_lines)? {
            tasks.push(stripped);
        }
    }
    let mut out = Dataset {
        tasks,
        meta: dataset.meta.clone(),
    };
    out.refresh_meta();
    Ok(out)
}

fn strip_lines(task: &Task, flagged: &BTreeSet<usize>) -> Result<Option<Task>, CorpusError> {
    let view = task
        .line_view()
        .map_err(|e| CorpusError::ReportMismatch(format!("task {:?}: {e}", task.id)))?;
    if let Some(bad) = flagged.iter().find(|&&i| i >= view.len()) {
        return Err(CorpusError::ReportMismatch(format!(
            "task {:?}: flagged line {bad} out of range",
            task.id
        )));
    }
    if flagged.len() == view.len() {
        return Ok(None);
    }
    let drop_raw: HashSet<usize> = flagged.iter().map(|&i| view.lines()[i].raw_lineno).collect();
    let code = task
        .code
        .split('\n')
        .enumerate()
        .filter(|(i, _)| !drop_raw.contains(&(i + 1)))
        .map(|(_, l)| l)
        .collect::<Vec<_>>()
        .join("\n");
    let injected_lines = task.injected_lines.as_ref().map(|inj| {
        // shift each surviving injected index down by the flagged lines before it
        inj.iter()
            .filter(|i| !flagged.contains(i))
            .map(|&i| i - flagged.range(..i).count())
            .collect::<BTreeSet<_>>()
    });
    let poisoned = match (&injected_lines, task.poisoned) {
        (Some(inj), Some(_)) => Some(!inj.is_empty()),
        (_, p) => p,
    };
    Ok(Some(Task {
        id: task.id.clone(),
        text: task.text.clone(),
        code,
        poisoned,
        injected_lines,
    }))
}
