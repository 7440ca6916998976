use depa::attacks::{poison_dataset, FamilyChoice, PoisonPlan, TriggerFamily};
use depa::lm::NgramModel;
use depa::{synth, Dataset};

pub const GENERATED_TASKS: usize = 400;
pub const ORDER: usize = 3;
pub const ALPHA: f64 = 0.1;
pub const RATE: f64 = 0.05;

/// A generated corpus split in half: the first half trains the language
/// model, the second half is poisoned and scanned.
pub struct Synthetic {
    pub train: Dataset,
    pub eval: Dataset,
    pub model: NgramModel,
}

impl Synthetic {
    pub fn new(corpus_seed: u64) -> Self {
        let (train, eval) = synth::split_half(&synth::generate(GENERATED_TASKS, corpus_seed));
        let model = NgramModel::train(&synth::training_strings(&train), ORDER, ALPHA).expect("valid parameters");
        Self { train, eval, model }
    }

    /// One poisoned copy of the eval half per generated family, seeds
    /// `100 + family index`, concatenated. Task ids get a family prefix so
    /// they stay unique.
    pub fn pooled_families(&self) -> Dataset {
        let mut tasks = Vec::new();
        for (i, family) in TriggerFamily::GENERATED.into_iter().enumerate() {
            let plan = PoisonPlan::new(RATE, 1, 100 + i as u64);
            let out = poison_dataset(&self.eval, &plan, &FamilyChoice::Family(family)).expect("eval half is non-empty");
            tasks.extend(out.dataset.tasks.into_iter().map(|mut t| {
                t.id = format!("{family}/{}", t.id);
                t
            }));
        }
        Dataset::new("pooled-families", tasks)
    }

    /// The eval half with `k` randomly chosen triggers per poisoned task.
    pub fn random_k(&self, k: usize, seed: u64) -> Dataset {
        poison_dataset(&self.eval, &PoisonPlan::new(RATE, k, seed), &FamilyChoice::Random)
            .expect("eval half is non-empty")
            .dataset
    }

    pub fn with_choice(&self, choice: &FamilyChoice, seed: u64) -> Dataset {
        poison_dataset(&self.eval, &PoisonPlan::new(RATE, 1, seed), choice)
            .expect("eval half is non-empty")
            .dataset
    }
}
