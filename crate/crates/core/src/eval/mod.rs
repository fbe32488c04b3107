//! Detection metrics and score analyses.

mod metrics;
mod report;

pub use metrics::{auroc, f1_at_threshold, f1_max, histogram_overlap, shared_histogram, F1Point, Histogram};
pub use report::{
    beta_csv, beta_sweep, decomposition_report, histogram_csv, metrics_csv, BetaPoint, ScoreKind, ScoreSet,
    SplitScores,
};
