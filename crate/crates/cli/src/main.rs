mod config;
mod manifest;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{process_env, run_config, BackendArgs, ConfigError, DetectorArgs, RunConfig};
use depa::attacks::{
    ga_attack, poison_dataset, AttackError, Comparison, FamilyChoice, GaConfig, InsertionPolicy, PoisonPlan,
    TriggerFamily,
};
use depa::codetext::CodeTextError;
use depa::corpus::{
    cleanse, load_dataset, load_reports, match_reports, save_dataset, save_reports, CleanseMode, CorpusError,
    DatasetFormat,
};
use depa::eval::metrics::{localization, LineSets, MetricError};
use depa::eval::{
    evaluate, roc_curve, sweep_threshold, throughput, write_roc_csv, write_sweep_csv, Averaging, EvalError,
};
use depa::exec::with_workers;
use depa::lm::{scoring_input, LmError, NgramError, NgramModel};
use depa::{synth, Dataset, Detector};
use manifest::Manifest;
use serde::Serialize;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Detect dead-code poisoning in code datasets with line-level perplexity.
///
/// Options that select a backend or detector are resolved with the
/// precedence: command-line flags, then environment variables
/// (DEPA_LM_ENDPOINT, DEPA_LM_MODEL), then the --config TOML file.
///
/// Exit codes: 0 success, 2 malformed input, 3 backend unreachable,
/// 4 configuration conflict, 1 anything else.
#[derive(Parser)]
#[command(name = "depa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus of clean tasks.
    Synth {
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an n-gram model on a JSONL corpus.
    TrainLm {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Insert dead-code triggers into a clean dataset.
    Poison(PoisonArgs),
    /// Score every task and write one report per task.
    Detect {
        #[command(flatten)]
        io: DetectIo,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        detector: DetectorArgs,
        /// Record per-task wall time in reports (output is then not reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Localization precision, recall and accuracy of reports against ground truth.
    Locate {
        #[command(flatten)]
        truth: TruthArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All detection metrics as JSON, plus an optional ROC curve CSV.
    Eval {
        #[command(flatten)]
        truth: TruthArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Metrics over a grid of thresholds, scoring each task once.
    Sweep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        t_min: f64,
        #[arg(long, default_value_t = 3.0)]
        t_max: f64,
        #[arg(long, default_value_t = 0.1)]
        t_step: f64,
        #[arg(long = "macro")]
        macro_avg: bool,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        detector: DetectorArgs,
    },
    /// Evolve a grammar trigger that evades the detector.
    GaAttack(GaArgs),
    /// Remove flagged tasks or lines from a dataset.
    Cleanse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reports: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::DropTask)]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DetectIo {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TruthArgs {
    /// Dataset with ground truth (`poisoned`, `injected_lines`).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    reports: PathBuf,
    /// Average localization per task instead of pooling counts.
    #[arg(long = "macro")]
    macro_avg: bool,
}

impl TruthArgs {
    fn averaging(&self) -> Averaging {
        if self.macro_avg {
            Averaging::Macro
        } else {
            Averaging::Micro
        }
    }
}

#[derive(Args, Serialize)]
struct PoisonArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    rate: f64,
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Trigger segments per poisoned task.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = InsertionArg::Uniform)]
    insertion: InsertionArg,
    /// Render the first fixed trigger with `>` instead of `>=`.
    #[arg(long)]
    strict_gt: bool,
}

#[derive(Args)]
struct GaArgs {
    #[arg(long)]
    input: PathBuf,
    /// Evolved trigger as JSON.
    #[arg(long)]
    out: PathBuf,
    /// Per-generation fitness trace as CSV.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 100)]
    population: usize,
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    #[arg(long, default_value_t = 0.05)]
    rate: f64,
    /// Tasks drawn for each fitness evaluation (default: all).
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    detector: DetectorArgs,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum FamilyArg {
    Fixed1,
    Fixed2,
    Grammar1,
    Grammar2,
    Random,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum InsertionArg {
    Uniform,
    AfterSignature,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    DropTask,
    StripLines,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<LmError>() {
            if e.is_unreachable() {
                return 3;
            }
        }
        if let Some(e) = cause.downcast_ref::<AttackError>() {
            return match e {
                AttackError::EmptyDataset | AttackError::EmptyTask(_) => 2,
                _ => 4,
            };
        }
        if let Some(e) = cause.downcast_ref::<NgramError>() {
            return match e {
                NgramError::InvalidOrder | NgramError::InvalidAlpha(_) => 4,
                _ => 2,
            };
        }
        if cause.is::<CorpusError>() || cause.is::<CodeTextError>() || cause.is::<MetricError>() {
            return 2;
        }
        if let Some(EvalError::NoGroundTruth(_)) = cause.downcast_ref::<EvalError>() {
            return 2;
        }
    }
    1
}

fn load(path: &Path) -> Result<Dataset> {
    Ok(load_dataset(path, DatasetFormat::Jsonl)?)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { n, seed, out } => {
            save_dataset(&synth::generate(n, seed), &out)?;
            #[derive(Serialize)]
            struct Cfg {
                n: usize,
                seed: u64,
            }
            Manifest::new("synth", Cfg { n, seed })?.write(&[&out])?;
        }
        Command::TrainLm {
            corpus,
            order,
            alpha,
            out,
        } => {
            let data = load(&corpus)?;
            let strings: Vec<String> = data.tasks.iter().map(|t| scoring_input(&t.text, &t.code)).collect();
            let model = NgramModel::train(&strings, order, alpha)?;
            model.save(&out)?;
            #[derive(Serialize)]
            struct Cfg {
                order: usize,
                alpha: f64,
            }
            Manifest::new("train-lm", Cfg { order, alpha })?
                .input(&corpus)?
                .write(&[&out])?;
            eprintln!("vocabulary: {} tokens", model.vocabulary().len());
        }
        Command::Poison(args) => poison(args)?,
        Command::Detect {
            io,
            backend,
            detector,
            timing,
        } => {
            let cfg = run_config(&backend, &detector, &process_env)?;
            let data = load(&io.input)?;
            let lm = config::open_backend(&cfg.backend)?;
            let det = Detector::new(lm.as_ref(), cfg.detector, cfg.threshold);
            let (rate, mut reports) = throughput(&det, &data, cfg.execution, cfg.workers)?;
            if !timing {
                reports.iter_mut().for_each(|r| r.elapsed_ms = 0.0);
            }
            save_reports(&reports, &io.out)?;
            let flagged = reports.iter().filter(|r| r.verdict).count();
            eprintln!(
                "{flagged}/{} tasks flagged, {:.1} tasks/min",
                reports.len(),
                rate.tasks_per_minute
            );
            #[derive(Serialize)]
            struct Cfg<'a> {
                run: &'a RunConfig,
                #[serde(skip_serializing_if = "Option::is_none")]
                throughput: Option<depa::eval::Throughput>,
            }
            let cfg = Cfg {
                run: &cfg,
                throughput: timing.then_some(rate),
            };
            Manifest::new("detect", cfg)?.input(&io.input)?.write(&[&io.out])?;
        }
        Command::Locate { truth, out } => {
            let data = load(&truth.input)?;
            let reports = load_reports(&truth.reports)?;
            let pairs = match_reports(&data, &reports)?;
            let mut lines = Vec::new();
            for (t, _) in &pairs {
                lines.push(t.line_view()?.len());
            }
            let sets: Vec<LineSets<'_>> = pairs
                .iter()
                .zip(&lines)
                .filter(|((t, _), _)| t.is_poisoned())
                .filter_map(|((t, r), &n)| {
                    t.injected_lines.as_ref().map(|injected| LineSets {
                        task_id: &t.id,
                        flagged: &r.flagged_lines,
                        injected,
                        lines: n,
                    })
                })
                .collect();
            let loc = localization(&sets, truth.averaging())?;
            let text = serde_json::to_string_pretty(&loc)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, format!("{text}\n"))
                        .with_context(|| format!("writing {}", path.display()))?;
                    Manifest::new("locate", truth.averaging())?
                        .input(&truth.input)?
                        .input(&truth.reports)?
                        .write(&[&path])?;
                }
                None => println!("{text}"),
            }
        }
        Command::Eval { truth, out, roc } => {
            let data = load(&truth.input)?;
            let reports = load_reports(&truth.reports)?;
            let summary = evaluate(&data, &reports, truth.averaging())?;
            std::fs::write(&out, format!("{}\n", serde_json::to_string_pretty(&summary)?))
                .with_context(|| format!("writing {}", out.display()))?;
            let mut outputs: Vec<&Path> = vec![&out];
            if let Some(path) = &roc {
                let points = roc_curve(&data, &reports)?;
                write_roc_csv(&points, create(path)?)?;
                outputs.push(path);
            }
            Manifest::new("eval", truth.averaging())?
                .input(&truth.input)?
                .input(&truth.reports)?
                .write(&outputs)?;
        }
        Command::Sweep {
            input,
            out,
            t_min,
            t_max,
            t_step,
            macro_avg,
            backend,
            detector,
        } => {
            if !(t_min > 0.0 && t_step > 0.0 && t_max >= t_min) {
                return Err(ConfigError(format!("bad grid {t_min}..={t_max} step {t_step}")).into());
            }
            let steps = ((t_max - t_min) / t_step + 1e-9).floor() as usize;
            let grid: Vec<f64> = (0..=steps).map(|i| t_min + i as f64 * t_step).collect();
            let cfg = run_config(&backend, &detector, &process_env)?;
            let data = load(&input)?;
            let lm = config::open_backend(&cfg.backend)?;
            let det = Detector::new(lm.as_ref(), cfg.detector, cfg.threshold);
            let averaging = if macro_avg { Averaging::Macro } else { Averaging::Micro };
            let points = with_workers(cfg.execution, cfg.workers, || {
                sweep_threshold(&det, &data, &grid, averaging, cfg.execution)
            })?;
            write_sweep_csv(&points, create(&out)?)?;
            #[derive(Serialize)]
            struct Cfg<'a> {
                run: &'a RunConfig,
                grid: &'a [f64],
                averaging: Averaging,
            }
            Manifest::new(
                "sweep",
                Cfg {
                    run: &cfg,
                    grid: &grid,
                    averaging,
                },
            )?
            .input(&input)?
            .write(&[&out])?;
        }
        Command::GaAttack(args) => ga(args)?,
        Command::Cleanse {
            input,
            reports,
            mode,
            out,
        } => {
            let data = load(&input)?;
            let reps = load_reports(&reports)?;
            let mode = match mode {
                ModeArg::DropTask => CleanseMode::DropTask,
                ModeArg::StripLines => CleanseMode::StripLines,
            };
            let cleaned = cleanse(&data, &reps, mode)?;
            save_dataset(&cleaned, &out)?;
            eprintln!("kept {}/{} tasks", cleaned.len(), data.len());
            Manifest::new("cleanse", mode)?
                .input(&input)?
                .input(&reports)?
                .write(&[&out])?;
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn poison(args: PoisonArgs) -> Result<()> {
    let data = load(&args.input)?;
    let mut plan = PoisonPlan::new(args.rate, args.k, args.seed);
    plan.insertion = match args.insertion {
        InsertionArg::Uniform => InsertionPolicy::UniformInBody,
        InsertionArg::AfterSignature => InsertionPolicy::AfterSignature,
    };
    if args.strict_gt {
        plan.comparison = Comparison::Greater;
    }
    let choice = match args.family {
        FamilyArg::Fixed1 => FamilyChoice::Family(TriggerFamily::Fixed1),
        FamilyArg::Fixed2 => FamilyChoice::Family(TriggerFamily::Fixed2),
        FamilyArg::Grammar1 => FamilyChoice::Family(TriggerFamily::Grammar1),
        FamilyArg::Grammar2 => FamilyChoice::Family(TriggerFamily::Grammar2),
        FamilyArg::Random => FamilyChoice::Random,
    };
    let outcome = poison_dataset(&data, &plan, &choice)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    save_dataset(&outcome.dataset, &args.out)?;
    eprintln!("poisoned {}/{} tasks", outcome.poisoned.len(), data.len());
    Manifest::new("poison", &args)?
        .input(&args.input)?
        .write(&[&args.out])?;
    Ok(())
}

fn ga(args: GaArgs) -> Result<()> {
    let cfg = run_config(&args.backend, &args.detector, &process_env)?;
    let file = args.backend.file()?;
    let data = load(&args.input)?;
    let lm = config::open_backend(&cfg.backend)?;
    let det = Detector::new(lm.as_ref(), cfg.detector, cfg.threshold);
    let ga_cfg = GaConfig {
        population: args.population,
        iterations: args.iterations,
        rate: args.rate,
        sample_size: args.sample_size,
        seed: args.seed.or(file.seed).unwrap_or(0),
        exec: cfg.execution,
        ..GaConfig::default()
    };
    let outcome = with_workers(cfg.execution, cfg.workers, || ga_attack(&det, &data, &ga_cfg))?;

    #[derive(Serialize)]
    struct Evolved<'a> {
        trigger: &'a depa::attacks::TriggerSpec,
        genome: &'a depa::attacks::Genome,
        fitness: f64,
        evaluations: usize,
    }
    let evolved = Evolved {
        trigger: &outcome.trigger,
        genome: &outcome.best,
        fitness: outcome.best_fitness,
        evaluations: outcome.evaluations,
    };
    std::fs::write(&args.out, format!("{}\n", serde_json::to_string_pretty(&evolved)?))
        .with_context(|| format!("writing {}", args.out.display()))?;
    let mut w = csv::Writer::from_writer(create(&args.trace)?);
    for p in &outcome.trace {
        w.serialize(p)?;
    }
    w.flush()?;
    eprintln!(
        "best fitness {:.4} (detector F1 {:.4})",
        outcome.best_fitness,
        1.0 - outcome.best_fitness
    );

    #[derive(Serialize)]
    struct Cfg<'a> {
        run: &'a RunConfig,
        ga: &'a GaConfig,
    }
    Manifest::new("ga-attack", Cfg { run: &cfg, ga: &ga_cfg })?
        .input(&args.input)?
        .write(&[&args.out, &args.trace])?;
    Ok(())
}
