//! Poisoned-dataset generation: fixed and grammar triggers, Random-k
//! insertion, and a genetic search for evasive triggers.

pub mod ga;
pub mod poison;
pub mod triggers;

pub use ga::{ga_attack, GaConfig, GaError, GaOutcome, Genome, TracePoint};
pub use poison::{poison_dataset, AttackError, FamilyChoice, InsertionPolicy, PoisonOutcome, PoisonPlan};
pub use triggers::{
    check_dead, fixed_trigger, grammar_trigger_1, grammar_trigger_2, Comparison, FixedKind, TriggerFamily, TriggerSpec,
};
