//! Detection and removal of dead-code poisoning in code datasets.
//!
//! The line detector ([`depa`]) scores each code line by the perplexity of
//! the file variants that keep it; [`onion`] is the token-level baseline.
//! [`attacks`] generates poisoned datasets, [`eval`] measures detectors.

pub mod attacks;
pub mod codetext;
pub mod corpus;
pub mod depa;
pub mod detector;
pub mod eval;
pub mod exec;
pub mod lm;
pub mod onion;
pub mod synth;

pub use corpus::{Dataset, DetectionReport, Task};
pub use depa::ScoreTransform;
pub use detector::{Detector, DetectorKind};
pub use exec::Execution;
pub use onion::TokenizerStrategy;
