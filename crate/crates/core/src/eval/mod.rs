//! Measuring detectors against labelled datasets.

pub mod drivers;
pub mod metrics;

pub use drivers::{
    default_grid, evaluate, roc_curve, sweep_threshold, throughput, write_roc_csv, write_sweep_csv, EvalError,
    EvalSummary, SweepPoint, Throughput,
};
pub use metrics::{auroc, auroc_fraction, f1, localization, Averaging, Localization, MetricError, Prf};
