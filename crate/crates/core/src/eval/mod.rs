pub mod cv;
pub mod metrics;
pub mod report;
pub mod stats;
pub mod svd;

pub use cv::{
    accuracy_gap, collect_sweep, cross_validate, label_rate_sweep, labeled_subjects, pretrain_fold, repeat_seed, score_fold,
    train_fold, FoldPlan, FoldResult, Method, SweepEntry,
};
pub use metrics::{binary_metrics, roc_auc, BinaryMetrics, MetricsReport, Summary};
pub use report::RunStamp;
pub use stats::{two_sample_ttest, TTest};
pub use svd::{singular_value_profile, trailing_sum};
