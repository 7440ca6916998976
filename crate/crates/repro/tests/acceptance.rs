//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use depa::attacks::{
    check_dead, ga_attack, grammar_trigger_1, grammar_trigger_2, FamilyChoice, GaConfig, TriggerFamily,
};
use depa::codetext::{tokenize_code, tokenize_subword};
use depa::corpus::{cleanse, CleanseMode};
use depa::depa::{flag_lines, line_scores, LineScoreTable};
use depa::eval::{
    auroc, auroc_fraction, default_grid, evaluate, roc_curve, sweep_threshold, write_roc_csv, write_sweep_csv,
    Averaging,
};
use depa::lm::{CountingBackend, NgramModel, PerplexityBackend};
use depa::{synth, Dataset, DetectionReport, Detector, Execution, ScoreTransform, Task, TokenizerStrategy};
use depa_repro::oracle::{code_lines, double_loop_scores, pairwise_auroc, ChainRule};
use depa_repro::setup::Synthetic;
use depa_repro::trigger_check;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

const MBPP_FIXTURE: &str = include_str!("../../core/tests/fixtures/mbpp_task.py");

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn detect(model: &NgramModel, kind: &str, data: &Dataset) -> Vec<DetectionReport> {
    let detector = match kind {
        "depa" => Detector::depa(model),
        _ => Detector::onion(model, TokenizerStrategy::CodeLexer),
    };
    detector
        .detect_all(&data.tasks, Execution::Parallel)
        .expect("n-gram backend does not fail")
}

/// Tasks used wherever a criterion says "fixtures": the hand-written MBPP
/// task, the clean eval half, and the poisoned tasks of every family.
fn fixture_tasks(s: &Synthetic) -> Vec<Task> {
    let mut tasks = vec![Task::new("mbpp", "Largest contiguous sum.", MBPP_FIXTURE)];
    tasks.extend(s.eval.tasks.iter().cloned());
    tasks.extend(s.pooled_families().tasks.into_iter().filter(Task::is_poisoned));
    tasks
}

fn c1_accumulation_matches_definition(s: &Synthetic) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let source = &s.eval.tasks[i % s.eval.len()];
        let lines = code_lines(&source.code);
        let n = rng.gen_range(2..=10).min(lines.len());
        let task = Task::new(format!("t{i}"), source.text.clone(), lines[..n].join("\n"));
        let got = line_scores(&task, &s.model).map_err(|e| e.to_string())?.ppl_lines();
        let want = double_loop_scores(&task, &s.model);
        ensure(got.len() == want.len(), || {
            format!("task {i}: {} vs {} lines", got.len(), want.len())
        })?;
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max(rel_err(*g, *w));
        }
    }
    ensure(worst <= 1e-9, || format!("max relative error {worst:e} > 1e-9"))?;
    Ok(format!("200 tasks, max relative error {worst:.1e}"))
}

const TWENTY: [&str; 20] = [
    "a b a",
    "a b c",
    "b c a",
    "c a b",
    "a a b",
    "b b c",
    "c c a",
    "a b a b",
    "b a c",
    "c b a",
    "x = a + b",
    "y = b * c",
    "return a",
    "return b",
    "print(a)",
    "print(b, c)",
    "if a:\n    b",
    "for a in b:\n    c",
    "a\nb\nc",
    "def f(a):\n    return a",
];

fn c2_perplexity_oracle() -> Check {
    let queries = [
        "a b a",
        "c c c",
        "a b zz",
        "print(a)\nreturn b",
        "def g(q):\n    return q",
    ];
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for order in 1..=4 {
        for alpha in [0.1, 0.5, 1.0, 2.0] {
            let model = NgramModel::train(&TWENTY, order, alpha).map_err(|e| e.to_string())?;
            let oracle = ChainRule::train(&TWENTY, order, alpha);
            ensure(model.support_size() == oracle.vocab_size(), || {
                "vocabulary sizes differ".into()
            })?;
            for q in TWENTY.iter().chain(&queries) {
                worst = worst.max(rel_err(model.perplexity(q).unwrap(), oracle.perplexity(q)));
                checked += 1;
            }
        }
    }
    ensure(worst <= 1e-12, || {
        format!("chain rule: max relative error {worst:e} > 1e-12")
    })?;
    let mut uniform_worst: f64 = 0.0;
    for order in 1..=4 {
        let model = NgramModel::uniform(order, TWENTY.iter().flat_map(|s| s.split_whitespace())).unwrap();
        let v = model.support_size() as f64;
        for q in TWENTY.iter().chain(&queries) {
            uniform_worst = uniform_worst.max(rel_err(model.perplexity(q).unwrap(), v));
        }
    }
    // exp(ln V) rounds to within a couple of ulps of V
    ensure(uniform_worst <= 4.0 * f64::EPSILON, || {
        format!("uniform: relative error {uniform_worst:e}")
    })?;
    Ok(format!(
        "{checked} chain-rule queries, max rel err {worst:.1e}; uniform PPL = |V| within {uniform_worst:.1e}"
    ))
}

fn c3_auroc_exact() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ties = 0;
    for set in 0..100 {
        let n = rng.gen_range(2..=100);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..12) as f64 * 0.25).collect();
        let want = pairwise_auroc(&scores, &labels);
        let got = auroc_fraction(&scores, &labels).map_err(|e| e.to_string())?;
        let got_ratio = Ratio::new(got.numerator, got.denominator);
        ensure(got_ratio == want, || format!("set {set}: {got_ratio} vs {want}"))?;
        let as_float = auroc(&scores, &labels).unwrap();
        let exact = *want.numer() as f64 / *want.denom() as f64;
        ensure(rel_err(as_float, exact) <= 1e-15, || {
            format!("set {set}: float {as_float} vs {exact}")
        })?;
        if got.numerator % 2 == 1 {
            ties += 1;
        }
    }
    Ok(format!("100 sets equal as rationals ({ties} with an odd tie count)"))
}

fn scaled(table: &LineScoreTable, c: f64) -> LineScoreTable {
    let mut out = table.clone();
    for row in &mut out.rows {
        row.ppl_line *= c;
    }
    out
}

fn c4_threshold_and_scale(s: &Synthetic) -> Check {
    let grid = default_grid();
    let tasks = fixture_tasks(s);
    for task in &tasks {
        let table = line_scores(task, &s.model).map_err(|e| e.to_string())?;
        for transform in [ScoreTransform::Square, ScoreTransform::Identity] {
            let mut previous: Option<BTreeSet<usize>> = None;
            for &t in &grid {
                let flags = flag_lines(&table, t, transform).flagged_lines();
                if let Some(p) = &previous {
                    ensure(flags.is_subset(p), || {
                        format!("{}: flags grew at T={t} ({transform:?})", task.id)
                    })?;
                }
                for c in [0.5, 3.0, 10.0] {
                    let other = flag_lines(&scaled(&table, c), t, transform).flagged_lines();
                    ensure(other == flags, || {
                        format!("{}: scaling by {c} changed flags at T={t}", task.id)
                    })?;
                }
                previous = Some(flags);
            }
        }
    }
    Ok(format!(
        "{} tasks x 26 thresholds x 2 transforms x 3 scales",
        tasks.len()
    ))
}

fn c5_directional_ordering(s: &Synthetic) -> Check {
    let data = s.pooled_families();
    let depa = evaluate(&data, &detect(&s.model, "depa", &data), Averaging::Micro).map_err(|e| e.to_string())?;
    let onion = evaluate(&data, &detect(&s.model, "onion", &data), Averaging::Micro).map_err(|e| e.to_string())?;
    let (da, oa) = (depa.auroc.unwrap(), onion.auroc.unwrap());
    let (dl, ol) = (
        depa.localization.as_ref().unwrap().precision,
        onion.localization.as_ref().unwrap().precision,
    );
    let detail = format!(
        "{} tasks ({} poisoned): AUROC depa {da:.3} vs onion {oa:.3}; localization precision depa {dl:.3} vs onion {ol:.3}",
        depa.tasks, depa.poisoned
    );
    ensure(da > 0.5 && da > oa && dl > ol, || detail.clone())?;
    Ok(detail)
}

fn c6_random_k_trend(s: &Synthetic) -> Check {
    let mut depa_votes = 0;
    let mut onion_votes = 0;
    let mut rows = Vec::new();
    for seed in 0..3 {
        let f1 = |kind: &str, k: usize| {
            let data = s.random_k(k, seed);
            evaluate(&data, &detect(&s.model, kind, &data), Averaging::Micro)
                .unwrap()
                .f1
        };
        let (d1, d10, o1, o10) = (f1("depa", 1), f1("depa", 10), f1("onion", 1), f1("onion", 10));
        depa_votes += usize::from(d10 >= d1);
        onion_votes += usize::from(o10 <= o1);
        rows.push(format!("seed {seed}: depa {d1:.3}->{d10:.3}, onion {o1:.3}->{o10:.3}"));
    }
    let detail = format!(
        "depa k10>=k1 on {depa_votes}/3, onion k10<=k1 on {onion_votes}/3 [{}]",
        rows.join("; ")
    );
    ensure(depa_votes >= 2 && onion_votes >= 2, || detail.clone())?;
    Ok(detail)
}

fn c7_call_counts(s: &Synthetic) -> Check {
    let backend = CountingBackend::new(s.model.clone());
    let tasks = fixture_tasks(s);
    let depa = Detector::depa(&backend);
    let onion_lex = Detector::onion(&backend, TokenizerStrategy::CodeLexer);
    let onion_sub = Detector::onion(&backend, TokenizerStrategy::BackendNative);
    let (mut depa_total, mut onion_total) = (0, 0);
    for task in &tasks {
        let n = task.line_view().unwrap().len();
        backend.reset();
        depa.detect(task).map_err(|e| e.to_string())?;
        ensure(backend.reset() == n, || {
            format!("{}: depa made {} calls for {n} lines", task.id, backend.calls())
        })?;
        depa_total += n;
        for (detector, t) in [
            (&onion_lex, tokenize_code(&task.code).unwrap().len()),
            (&onion_sub, tokenize_subword(&task.code).unwrap().len()),
        ] {
            detector.detect(task).map_err(|e| e.to_string())?;
            let calls = backend.reset();
            ensure(calls == t + 1, || {
                format!("{}: onion made {calls} calls for {t} tokens", task.id)
            })?;
        }
        onion_total += tokenize_code(&task.code).unwrap().len() + 1;
    }
    Ok(format!(
        "{} tasks: depa {depa_total} calls, onion(code_lexer) {onion_total} calls",
        tasks.len()
    ))
}

fn c8_trigger_validity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..1000 {
        let p = grammar_trigger_1(&mut rng);
        trigger_check::grammar1(&p).map_err(|e| format!("grammar1 sample {i}: {e}"))?;
        check_dead(&p).map_err(|e| format!("grammar1 sample {i}: {}", e.0))?;
        let p = grammar_trigger_2(&mut rng);
        trigger_check::grammar2(&p).map_err(|e| format!("grammar2 sample {i}: {e}"))?;
        check_dead(&p).map_err(|e| format!("grammar2 sample {i}: {}", e.0))?;
    }
    Ok("1000 samples per grammar family lex, satisfy constraints, and are dead".into())
}

fn c9_ga_direction(s: &Synthetic) -> Check {
    let detector = Detector::depa(&s.model);
    let cfg = GaConfig::default();
    let outcome = ga_attack(&detector, &s.eval, &cfg).map_err(|e| e.to_string())?;
    let fitness: Vec<f64> = outcome.trace.iter().map(|p| p.best_fitness).collect();
    ensure(fitness.windows(2).all(|w| w[1] >= w[0]), || {
        format!("trace decreased: {fitness:?}")
    })?;
    let f1 = |choice: &FamilyChoice| {
        let data = s.with_choice(choice, 7);
        evaluate(&data, &detect(&s.model, "depa", &data), Averaging::Micro)
            .unwrap()
            .f1
    };
    let evolved = f1(&FamilyChoice::Evolved(outcome.best.clone()));
    let grammar = f1(&FamilyChoice::Family(TriggerFamily::Grammar1));
    let detail = format!(
        "population {} x {} iterations: F1 evolved {evolved:.3} vs grammar1 {grammar:.3}; best fitness {:.3} -> {:.3}; trigger {:?}",
        cfg.population,
        cfg.iterations,
        fitness[0],
        fitness[fitness.len() - 1],
        outcome.trigger.payload
    );
    ensure(evolved <= grammar, || detail.clone())?;
    Ok(detail)
}

fn json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("serializable")
}

/// Every stage's output bytes for one end-to-end run.
fn pipeline(exec: Execution) -> Vec<(&'static str, Vec<u8>)> {
    let all = synth::generate(120, 5);
    let (train, eval) = synth::split_half(&all);
    let model = NgramModel::train(&synth::training_strings(&train), 3, 0.1).unwrap();
    let poisoned =
        depa::attacks::poison_dataset(&eval, &depa::attacks::PoisonPlan::new(0.1, 2, 9), &FamilyChoice::Random)
            .unwrap()
            .dataset;
    let detector = Detector::depa(&model);
    let mut reports = detector.detect_all(&poisoned.tasks, exec).unwrap();
    for r in &mut reports {
        r.elapsed_ms = 0.0;
    }
    let mut sweep = Vec::new();
    write_sweep_csv(
        &sweep_threshold(&detector, &poisoned, &default_grid(), Averaging::Micro, exec).unwrap(),
        &mut sweep,
    )
    .unwrap();
    let mut roc = Vec::new();
    write_roc_csv(&roc_curve(&poisoned, &reports).unwrap(), &mut roc).unwrap();
    let ga_cfg = GaConfig {
        population: 12,
        iterations: 3,
        seed: 4,
        exec,
        ..GaConfig::default()
    };
    vec![
        ("synth", json(&all.tasks)),
        ("model", model.to_json().into_bytes()),
        ("poison", json(&poisoned.tasks)),
        ("detect", json(&reports)),
        ("eval", json(&evaluate(&poisoned, &reports, Averaging::Micro).unwrap())),
        ("sweep", sweep),
        ("roc", roc),
        ("ga", json(&ga_attack(&detector, &eval, &ga_cfg).unwrap())),
        (
            "cleanse",
            json(&cleanse(&poisoned, &reports, CleanseMode::StripLines).unwrap().tasks),
        ),
    ]
}

fn c10_determinism() -> Check {
    let first = pipeline(Execution::Parallel);
    for (label, other) in [
        ("repeat", pipeline(Execution::Parallel)),
        ("sequential", pipeline(Execution::Sequential)),
    ] {
        for ((stage, a), (_, b)) in first.iter().zip(&other) {
            ensure(a == b, || format!("{stage} differs on {label} run"))?;
        }
    }
    let stages: Vec<&str> = first.iter().map(|(s, _)| *s).collect();
    Ok(format!(
        "{} stages byte-identical across 3 runs: {}",
        stages.len(),
        stages.join(", ")
    ))
}

struct Criterion<'a> {
    id: u8,
    limit: Option<Duration>,
    run: Box<dyn FnOnce() -> Check + 'a>,
}

fn main() -> ExitCode {
    // quiet the default panic printout; panics are reported as FAIL lines
    panic::set_hook(Box::new(|_| {}));
    let setup_start = Instant::now();
    let s = Synthetic::new(0);
    println!(
        "synthetic setup: {} train / {} eval tasks in {:.1?}",
        s.train.len(),
        s.eval.len(),
        setup_start.elapsed()
    );
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));
    let criteria: Vec<Criterion> = vec![
        Criterion {
            id: 1,
            limit: minutes(1),
            run: Box::new(|| c1_accumulation_matches_definition(&s)),
        },
        Criterion {
            id: 2,
            limit: None,
            run: Box::new(c2_perplexity_oracle),
        },
        Criterion {
            id: 3,
            limit: None,
            run: Box::new(c3_auroc_exact),
        },
        Criterion {
            id: 4,
            limit: None,
            run: Box::new(|| c4_threshold_and_scale(&s)),
        },
        Criterion {
            id: 5,
            limit: minutes(5),
            run: Box::new(|| c5_directional_ordering(&s)),
        },
        Criterion {
            id: 6,
            limit: None,
            run: Box::new(|| c6_random_k_trend(&s)),
        },
        Criterion {
            id: 7,
            limit: None,
            run: Box::new(|| c7_call_counts(&s)),
        },
        Criterion {
            id: 8,
            limit: Some(Duration::from_secs(10)),
            run: Box::new(c8_trigger_validity),
        },
        Criterion {
            id: 9,
            limit: minutes(15),
            run: Box::new(|| c9_ga_direction(&s)),
        },
        Criterion {
            id: 10,
            limit: None,
            run: Box::new(c10_determinism),
        },
    ];
    let mut failed = Vec::new();
    for c in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.1?}, limit {limit:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("criterion {:>2}: PASS ({elapsed:.1?}) {detail}", c.id),
            Err(detail) => {
                println!("criterion {:>2}: FAIL ({elapsed:.1?}) {detail}", c.id);
                failed.push(c.id);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} of 10 criteria fail: {failed:?}", failed.len());
        ExitCode::FAILURE
    }
}
