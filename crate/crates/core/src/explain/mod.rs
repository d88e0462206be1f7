//! Expected-gradients attribution and feature-importance summaries.

mod attribution;
mod summary;

pub use attribution::{align_baseline, expected_gradients, explain_stays, Attribution, ExplainConfig, LogitModel};
pub use summary::{summarize, write_attributions_csv, write_summary_csv, FeatureImportance};
