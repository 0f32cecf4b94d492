//! Evaluation metrics: binary classification panel, survival metrics,
//! Kaplan-Meier, percentile bootstrap, and the JSON report.

mod bootstrap;
mod classification;
mod report;
mod survival;

pub use bootstrap::{bootstrap_ci, percentile, ConfidenceInterval};
pub use classification::{auroc, brier, pr_metrics, threshold_metrics, BinaryEval, PrMetrics, ThresholdMetrics};
pub use report::{classification_report, survival_report, MetricValue, MetricsReport, ReportOptions};
pub use survival::{concordance_index, kaplan_meier, km_conditional_mean, l1_losses, KaplanMeier, L1Losses};
