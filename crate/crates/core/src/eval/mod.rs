//! Metrics, the repeated-split experiment harness and reporting.

mod auc;
mod experiment;
mod logreg;
mod report;
mod stats;

pub use auc::auc_roc;
pub use experiment::{run_experiments, ExperimentConfig, RunMetric, Variant};
pub use logreg::{stay_features, LogisticRegression, LogregPlan};
pub use report::{format_mean_std, load_metrics_csv, report, write_metrics_csv, Comparison, Report, VariantSummary};
pub use stats::{ln_gamma, mean, reg_inc_beta, std_dev, t_two_sided_p, welch_t_test, WelchResult};
