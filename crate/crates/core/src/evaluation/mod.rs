//! Metrics, ground-truth alignment and the cross-validation protocol.

mod align;
mod cv;
mod metrics;

pub use align::{hungarian, rmse_aligned, Alignment, MAX_EXHAUSTIVE_CLUSTERS};
pub use cv::{
    cross_validate, fit_family, EvalResult, FoldResult, MeanAndError, ModelFamily, Split,
    SplitPlan, DEFAULT_BETA_GRID,
};
pub use metrics::{
    average_precision, coverage_error_normalized, roc_auc, score_test_set, ScoreTable,
};
