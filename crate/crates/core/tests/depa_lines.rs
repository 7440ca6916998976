use depa::depa::{detect, flag_lines, line_scores, line_scores_with, variant};
use depa::lm::{scoring_input, CountingBackend, NgramModel, PerplexityBackend};
use depa::{synth, Execution, ScoreTransform, Task};
use proptest::prelude::*;

const FIXTURE: &str = include_str!("fixtures/mbpp_task.py");

fn code_lines(code: &str) -> Vec<String> {
    code.lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

/// For each line `i`, average `PPL(text + code without line j)` over every
/// `j != i`, one fresh backend call per (i, j) pair.
fn double_loop<B: PerplexityBackend>(task: &Task, backend: &B) -> Vec<f64> {
    let lines = code_lines(&task.code);
    let n = lines.len();
    (0..n)
        .map(|i| {
            let mut sum = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let kept: Vec<&str> = lines
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != j)
                    .map(|(_, l)| l.as_str())
                    .collect();
                sum += backend
                    .perplexity(&scoring_input(&task.text, &kept.join("\n")))
                    .unwrap();
            }
            sum / (n - 1) as f64
        })
        .collect()
}

fn trained() -> NgramModel {
    let (train, _) = synth::split_half(&synth::generate(200, 0));
    NgramModel::train(&synth::training_strings(&train), 3, 0.1).unwrap()
}

#[test]
fn fixture_has_eight_contiguous_lines() {
    let task = Task::new("mbpp", "", FIXTURE);
    let view = task.line_view().unwrap();
    assert_eq!(view.len(), 8);
    assert!(view.lines().iter().enumerate().all(|(i, l)| l.index == i));
}

#[test]
fn variant_drops_exactly_one_line() {
    let task = Task::new("five", "", "a = 1\nb = 2\nc = 3\nd = 4\ne = 5");
    let view = task.line_view().unwrap();
    assert_eq!(variant(&view, 2).unwrap(), "a = 1\nb = 2\nd = 4\ne = 5");
    assert!(variant(&view, 5).is_err());
}

#[test]
fn accumulation_equals_double_loop() {
    let model = trained();
    let mut tasks = vec![
        Task::new("mbpp", "Find the largest contiguous sum.", FIXTURE),
        Task::new("four", "", "def f(x):\n    y = x + 1\n    z = y * 2\n    return z"),
    ];
    tasks.extend(synth::generate(20, 9).tasks);
    for task in &tasks {
        let got = line_scores(task, &model).unwrap().ppl_lines();
        let want = double_loop(task, &model);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-9 * w.abs(), "{}: {g} vs {w}", task.id);
        }
    }
}

#[test]
fn exactly_n_calls_in_either_mode() {
    let model = CountingBackend::new(trained());
    let task = Task::new("mbpp", "", FIXTURE);
    for exec in [Execution::Sequential, Execution::Parallel] {
        model.reset();
        line_scores_with(&task, &model, exec).unwrap();
        assert_eq!(model.calls(), 8);
    }
}

fn with_guard(task: &Task) -> Task {
    let mut lines = code_lines(&task.code);
    let indent = " ".repeat(lines[1].len() - lines[1].trim_start().len());
    lines.insert(1, format!("{indent}while random() >= 68:"));
    lines.insert(2, format!("{indent}    print(\"warning\")"));
    Task::new(task.id.clone(), task.text.clone(), lines.join("\n"))
}

#[test]
fn injected_guard_line_is_flagged() {
    let (train, eval) = synth::split_half(&synth::generate(200, 0));
    let model = NgramModel::train(&synth::training_strings(&train), 3, 0.1).unwrap();
    let mut hits = 0;
    for task in eval.tasks.iter().take(40) {
        let report = detect(&with_guard(task), &model, 1.5, ScoreTransform::Square).unwrap();
        if report.flagged_lines.contains(&1) {
            hits += 1;
        }
    }
    assert!(hits >= 36, "guard line flagged in {hits} of 40 tasks");
    let first = detect(&with_guard(&eval.tasks[0]), &model, 1.5, ScoreTransform::Square).unwrap();
    assert_eq!(first.flagged_lines.into_iter().collect::<Vec<_>>(), vec![1]);
}

#[test]
fn clean_task_under_its_own_model_is_not_flagged() {
    let code = "def add(a, b):\n    c = a + b\n    d = c * 2\n    e = d - a\n    return e";
    let model = NgramModel::train(&[code], 3, 0.1).unwrap();
    let report = detect(&Task::new("clean", "", code), &model, 1.5, ScoreTransform::Square).unwrap();
    assert!(!report.verdict, "{:?}", report.flagged_lines);
}

#[test]
fn single_line_task_gets_a_note() {
    let model = trained();
    let report = detect(&Task::new("one", "", "return 1"), &model, 1.5, ScoreTransform::Square).unwrap();
    assert!(!report.verdict);
    assert!(report.note.is_some());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flags_shrink_as_threshold_grows(seed in 0u64..1000) {
        let model = trained();
        let task = &synth::generate(1, seed).tasks[0];
        let table = line_scores(task, &model).unwrap();
        for transform in [ScoreTransform::Square, ScoreTransform::Identity] {
            let mut prev = None;
            for step in 0..=25 {
                let t = 0.5 + 0.1 * step as f64;
                let flagged = flag_lines(&table, t, transform).flagged_lines();
                if let Some(p) = &prev {
                    prop_assert!(flagged.is_subset(p));
                }
                prev = Some(flagged);
            }
        }
    }
}
