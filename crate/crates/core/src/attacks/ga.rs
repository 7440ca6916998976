//! Genetic search for grammar triggers that evade a detector.
//!
//! An individual is a fixed-length gene vector covering both grammar
//! families. Fitness is `1 - F1` of the detector on a poisoned sample where
//! every poisoned task carries the individual's trigger. Clean-task verdicts
//! do not depend on the trigger and are computed once.

use super::poison::{poison_task, select_tasks, FamilyChoice, PoisonPlan};
use super::triggers::{
    BodyKind, Grammar1Params, Grammar2Params, GuardFn, Head, TriggerFamily, TriggerSpec, ARG_RANGE, BOUND_RANGE,
    GRAMMAR1_KEYWORDS, LOG_LEVELS, LOOP_BOUND_RANGE,
};
use crate::corpus::{Dataset, Task};
use crate::detector::{DetectError, TaskDetector};
use crate::eval::metrics::confusion_f1;
use crate::exec::{try_map_ordered, Execution};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

const FAMILY: usize = 0;
const HEAD: usize = 1;
const FUNC: usize = 2;
const ARG: usize = 3;
const BOUND: usize = 4;
const BODY: usize = 5;
const MSG_CHOICE: usize = 6;
const MSG4: usize = 7;
const LOOP_BOUND: usize = 8;
const LEVEL: usize = 9;
const MSG5: usize = 10;
pub const GENES: usize = 11;

const CARDINALITY: [u32; GENES] = [
    2,
    2,
    5,
    ARG_RANGE.1 - ARG_RANGE.0 + 1,
    BOUND_RANGE.1 - BOUND_RANGE.0 + 1,
    2,
    5, // four keywords or a random four-letter word
    26 * 26 * 26 * 26,
    (LOOP_BOUND_RANGE.1 - LOOP_BOUND_RANGE.0 + 1) as u32,
    5,
    26 * 26 * 26 * 26 * 26,
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genome {
    genes: [u32; GENES],
}

fn letters(mut code: u32, n: usize) -> String {
    let mut out = vec![b'a'; n];
    for slot in out.iter_mut().rev() {
        *slot = b'a' + (code % 26) as u8;
        code /= 26;
    }
    String::from_utf8(out).expect("ascii")
}

fn letters_code(word: &str) -> Option<u32> {
    word.bytes().try_fold(0u32, |acc, b| {
        b.is_ascii_lowercase().then(|| acc * 26 + (b - b'a') as u32)
    })
}

impl Genome {
    pub fn from_genes(genes: [u32; GENES]) -> Option<Self> {
        genes
            .iter()
            .zip(CARDINALITY)
            .all(|(g, c)| *g < c)
            .then_some(Self { genes })
    }

    pub fn genes(&self) -> &[u32; GENES] {
        &self.genes
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut genes = [0; GENES];
        for (g, c) in genes.iter_mut().zip(CARDINALITY) {
            *g = rng.gen_range(0..c);
        }
        Self { genes }
    }

    pub fn from_grammar1(p: &Grammar1Params) -> Option<Self> {
        let mut genes = [0; GENES];
        genes[FAMILY] = 0;
        genes[HEAD] = (p.head == Head::While) as u32;
        genes[FUNC] = GuardFn::ALL.iter().position(|f| *f == p.func)? as u32;
        genes[ARG] = p.arg.checked_sub(ARG_RANGE.0)?;
        genes[BOUND] = p.bound.checked_sub(BOUND_RANGE.0)?;
        genes[BODY] = (p.body == BodyKind::Raise) as u32;
        match GRAMMAR1_KEYWORDS.iter().position(|k| *k == p.message) {
            Some(i) => genes[MSG_CHOICE] = i as u32,
            None if p.message.len() == 4 => {
                genes[MSG_CHOICE] = 4;
                genes[MSG4] = letters_code(&p.message)?;
            }
            None => return None,
        }
        Self::from_genes(genes)
    }

    pub fn family(&self) -> TriggerFamily {
        if self.genes[FAMILY] == 0 {
            TriggerFamily::Grammar1
        } else {
            TriggerFamily::Grammar2
        }
    }

    pub fn grammar1(&self) -> Grammar1Params {
        let g = &self.genes;
        let message = match g[MSG_CHOICE] as usize {
            i if i < GRAMMAR1_KEYWORDS.len() => GRAMMAR1_KEYWORDS[i].to_string(),
            _ => letters(g[MSG4], 4),
        };
        Grammar1Params {
            head: if g[HEAD] == 0 { Head::If } else { Head::While },
            func: GuardFn::ALL[g[FUNC] as usize],
            arg: ARG_RANGE.0 + g[ARG],
            bound: BOUND_RANGE.0 + g[BOUND],
            body: if g[BODY] == 0 { BodyKind::Print } else { BodyKind::Raise },
            message,
        }
    }

    pub fn grammar2(&self) -> Grammar2Params {
        let g = &self.genes;
        Grammar2Params {
            loop_bound: LOOP_BOUND_RANGE.0 + g[LOOP_BOUND] as i32,
            level: g[LEVEL] as usize % LOG_LEVELS.len(),
            message: letters(g[MSG5], 5),
        }
    }

    pub fn render(&self) -> Vec<String> {
        match self.family() {
            TriggerFamily::Grammar1 => self.grammar1().render(),
            _ => self.grammar2().render(),
        }
    }

    pub fn spec(&self, seed: u64) -> TriggerSpec {
        TriggerSpec {
            family: TriggerFamily::Evolved,
            seed,
            payload: self.render(),
        }
    }

    fn crossover<R: Rng + ?Sized>(&self, other: &Self, rng: &mut R) -> Self {
        let cut = rng.gen_range(1..GENES);
        let mut genes = self.genes;
        genes[cut..].copy_from_slice(&other.genes[cut..]);
        Self { genes }
    }

    fn mutate<R: Rng + ?Sized>(&mut self, rate: f64, rng: &mut R) {
        for (g, c) in self.genes.iter_mut().zip(CARDINALITY) {
            if rng.gen_bool(rate) {
                *g = rng.gen_range(0..c);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub iterations: usize,
    pub tournament: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism: usize,
    /// Poisoning rate inside the fitness sample.
    pub rate: f64,
    /// Tasks drawn for fitness evaluation; `None` uses the whole dataset.
    pub sample_size: Option<usize>,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 100,
            iterations: 20,
            tournament: 3,
            crossover_rate: 0.9,
            mutation_rate: 1.0 / GENES as f64,
            elitism: 2,
            rate: 0.05,
            sample_size: None,
            seed: 0,
            exec: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaOutcome {
    pub best: Genome,
    pub best_fitness: f64,
    pub trigger: TriggerSpec,
    /// Entry 0 is the initial population, then one per iteration.
    pub trace: Vec<TracePoint>,
    pub evaluations: usize,
}

#[derive(Debug, Error)]
#[error("detector failed during generation {}", trace.len())]
pub struct GaError {
    #[source]
    pub source: DetectError,
    pub trace: Vec<TracePoint>,
}

struct FitnessSample {
    tasks: Vec<Task>,
    poisoned: Vec<usize>,
    plan: PoisonPlan,
    clean_flagged: usize,
}

impl FitnessSample {
    fn build(detector: &dyn TaskDetector, dataset: &Dataset, cfg: &GaConfig) -> Result<Self, DetectError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let tasks: Vec<Task> = match cfg.sample_size {
            Some(m) if m < dataset.len() => {
                let mut idx = sample(&mut rng, dataset.len(), m).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| dataset.tasks[i].clone()).collect()
            }
            _ => dataset.tasks.clone(),
        };
        let plan = PoisonPlan::new(cfg.rate, 1, cfg.seed);
        let mut poisoned = select_tasks(tasks.len(), &plan);
        if poisoned.is_empty() && !tasks.is_empty() {
            poisoned.push(0);
        }
        let clean: Vec<&Task> = tasks
            .iter()
            .enumerate()
            .filter(|(i, _)| poisoned.binary_search(i).is_err())
            .map(|(_, t)| t)
            .collect();
        let verdicts = try_map_ordered(cfg.exec, &clean, |_, t| detector.detect_task(t).map(|r| r.verdict))?;
        Ok(Self {
            clean_flagged: verdicts.iter().filter(|v| **v).count(),
            tasks,
            poisoned,
            plan,
        })
    }

    /// (fitness, f1) for one genome. Poisoned-task detection runs sequentially;
    /// callers parallelize across genomes.
    fn evaluate(&self, detector: &dyn TaskDetector, genome: &Genome) -> Result<(f64, f64), DetectError> {
        let choice = FamilyChoice::Evolved(genome.clone());
        let mut caught = 0;
        for &i in &self.poisoned {
            let (task, _) = poison_task(&self.tasks[i], i, &self.plan, &choice).expect("sample tasks have code lines");
            if detector.detect_task(&task)?.verdict {
                caught += 1;
            }
        }
        let f1 = confusion_f1(caught, self.clean_flagged, self.poisoned.len() - caught).f1;
        Ok((1.0 - f1, f1))
    }
}

fn tournament<'a, R: Rng + ?Sized>(pop: &'a [(Genome, f64)], size: usize, rng: &mut R) -> &'a Genome {
    let mut best = rng.gen_range(0..pop.len());
    for _ in 1..size.max(1) {
        let c = rng.gen_range(0..pop.len());
        if pop[c].1 > pop[best].1 {
            best = c;
        }
    }
    &pop[best].0
}

/// Evolve a trigger against `detector`. The returned trace's best fitness
/// never decreases (elites survive unchanged).
pub fn ga_attack(detector: &dyn TaskDetector, dataset: &Dataset, cfg: &GaConfig) -> Result<GaOutcome, GaError> {
    let fail = |source, trace: &[TracePoint]| GaError {
        source,
        trace: trace.to_vec(),
    };
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let sample = FitnessSample::build(detector, dataset, cfg).map_err(|e| fail(e, &trace))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let mut cache: HashMap<Genome, (f64, f64)> = HashMap::new();

    let mut genomes: Vec<Genome> = (0..cfg.population.max(1)).map(|_| Genome::random(&mut rng)).collect();
    let mut scored: Vec<(Genome, f64)>;
    let mut best: (Genome, f64, f64);
    let mut iteration = 0;
    loop {
        let fresh: Vec<Genome> = {
            let mut seen = std::collections::HashSet::new();
            genomes
                .iter()
                .filter(|g| !cache.contains_key(*g) && seen.insert((*g).clone()))
                .cloned()
                .collect()
        };
        let results =
            try_map_ordered(cfg.exec, &fresh, |_, g| sample.evaluate(detector, g)).map_err(|e| fail(e, &trace))?;
        cache.extend(fresh.into_iter().zip(results));
        scored = genomes.iter().map(|g| (g.clone(), cache[g].0)).collect();

        // first index wins ties, so the outcome does not depend on scheduling
        let top = scored
            .iter()
            .enumerate()
            .fold(0, |b, (i, s)| if s.1 > scored[b].1 { i } else { b });
        best = (scored[top].0.clone(), scored[top].1, cache[&scored[top].0].1);
        let mean = scored.iter().map(|s| s.1).sum::<f64>() / scored.len() as f64;
        trace.push(TracePoint {
            iteration,
            best_fitness: best.1,
            mean_fitness: mean,
            best_f1: best.2,
        });
        if iteration == cfg.iterations {
            break;
        }
        iteration += 1;

        let mut order: Vec<usize> = (0..scored.len()).collect();
        order.sort_by(|&a, &b| scored[b].1.total_cmp(&scored[a].1).then(a.cmp(&b)));
        let mut next: Vec<Genome> = order
            .iter()
            .take(cfg.elitism.min(scored.len()))
            .map(|&i| scored[i].0.clone())
            .collect();
        while next.len() < scored.len() {
            let a = tournament(&scored, cfg.tournament, &mut rng);
            let mut child = if rng.gen_bool(cfg.crossover_rate.clamp(0.0, 1.0)) {
                let b = tournament(&scored, cfg.tournament, &mut rng);
                a.crossover(b, &mut rng)
            } else {
                a.clone()
            };
            child.mutate(cfg.mutation_rate.clamp(0.0, 1.0), &mut rng);
            next.push(child);
        }
        genomes = next;
    }
    Ok(GaOutcome {
        trigger: best.0.spec(cfg.seed),
        best: best.0,
        best_fitness: best.1,
        trace,
        evaluations: cache.len(),
    })
}
