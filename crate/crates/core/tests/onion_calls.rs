use depa::codetext::{tokenize_code, tokenize_subword};
use depa::lm::{CountingBackend, NgramModel};
use depa::onion::{onion_detect, token_suspicion};
use depa::{synth, Detector, Execution, Task, TokenizerStrategy};

const FIXTURE: &str = include_str!("fixtures/mbpp_task.py");

fn model() -> NgramModel {
    let (train, _) = synth::split_half(&synth::generate(200, 0));
    NgramModel::train(&synth::training_strings(&train), 3, 0.1).unwrap()
}

#[test]
fn one_call_per_token_plus_baseline() {
    let backend = CountingBackend::new(model());
    let mut tasks = vec![Task::new("mbpp", "Largest sum.", FIXTURE)];
    tasks.extend(synth::generate(10, 3).tasks);
    for task in &tasks {
        for (strategy, t) in [
            (TokenizerStrategy::CodeLexer, tokenize_code(&task.code).unwrap().len()),
            (
                TokenizerStrategy::BackendNative,
                tokenize_subword(&task.code).unwrap().len(),
            ),
        ] {
            backend.reset();
            let table = token_suspicion(task, &backend, strategy).unwrap();
            assert_eq!(table.rows.len(), t);
            assert_eq!(backend.calls(), t + 1, "{} {strategy:?}", task.id);
        }
    }
}

#[test]
fn depa_needs_fewer_calls_than_onion() {
    let backend = CountingBackend::new(model());
    let tasks = synth::generate(20, 4).tasks;
    Detector::depa(&backend)
        .detect_all(&tasks, Execution::Sequential)
        .unwrap();
    let depa_calls = backend.reset();
    Detector::onion(&backend, TokenizerStrategy::CodeLexer)
        .detect_all(&tasks, Execution::Sequential)
        .unwrap();
    assert!(depa_calls < backend.calls());
}

#[test]
fn out_of_place_token_has_the_highest_suspicion() {
    let m = model();
    let (_, eval) = synth::split_half(&synth::generate(200, 0));
    let mut hits = 0;
    for task in eval.tasks.iter().take(20) {
        let mut lines: Vec<String> = task.line_view().unwrap().texts().map(str::to_string).collect();
        let last = lines.len() - 1;
        lines[last] = format!("{} qzxv", lines[last]);
        let poisoned = Task::new(task.id.clone(), task.text.clone(), lines.join("\n"));
        let table = token_suspicion(&poisoned, &m, TokenizerStrategy::CodeLexer).unwrap();
        let top = table
            .rows
            .iter()
            .max_by(|a, b| a.suspicion.total_cmp(&b.suspicion))
            .unwrap();
        if top.text == "qzxv" {
            hits += 1;
        }
    }
    assert!(hits >= 18, "odd token ranked first in {hits} of 20 tasks");
}

#[test]
fn flags_map_to_code_lines() {
    let m = model();
    for task in synth::generate(15, 8).tasks {
        let view = task.line_view().unwrap();
        let table = token_suspicion(&task, &m, TokenizerStrategy::CodeLexer)
            .unwrap()
            .flag(1.0);
        for row in &table.rows {
            let line = &view.lines()[row.line].text;
            assert!(
                line.contains(row.text.as_str()),
                "{:?} not on line {}",
                row.text,
                row.line
            );
        }
        let report = onion_detect(&task, &m, TokenizerStrategy::CodeLexer, 1.0).unwrap();
        assert_eq!(report.flagged_lines, table.flagged_lines());
        assert_eq!(report.verdict, table.rows.iter().any(|r| r.flagged));
    }
}
