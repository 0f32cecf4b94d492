use serde::{Deserialize, Serialize};

use super::bootstrap::bootstrap_ci;
use super::classification::{auroc, brier, pr_metrics, threshold_metrics, BinaryEval};
use super::survival::{concordance_index, l1_losses};
use crate::error::{Error, Result};
use crate::mtlr::{SurvivalCurve, SurvivalLabel};

/// One metric row: point estimate and 95% bootstrap interval. `None` marks
/// an undefined value (e.g. precision with no predicted positives).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricValue {
    pub point: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

/// Evaluation report; rows not applicable to the task are omitted from JSON.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc: Option<MetricValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auprc: Option<MetricValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap: Option<MetricValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<MetricValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub specificity: Option<MetricValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<MetricValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<MetricValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<MetricValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub brier: Option<MetricValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_index: Option<MetricValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1_marginal: Option<MetricValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1_hinge: Option<MetricValue>,
    /// Positive instances (observed events for survival) in the test set.
    pub p_pos_test: usize,
    pub p_neg_test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    pub replicates: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Report L1 losses as per-patient means instead of cohort sums.
    pub l1_mean: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            replicates: 1000,
            seed: 0,
            threshold: 0.5,
            l1_mean: false,
        }
    }
}

fn defined(v: Option<f64>, what: &str) -> Result<f64> {
    v.ok_or_else(|| Error::InvalidArgument(format!("{what} undefined on this sample")))
}

/// Bootstraps `metric` unless its point value is undefined.
fn row<F>(n: usize, metric: F, opts: &ReportOptions, stream: u64) -> Result<MetricValue>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    let all: Vec<usize> = (0..n).collect();
    if metric(&all).is_err() {
        return Ok(MetricValue::default());
    }
    let seed = crate::rng::derive_seed(opts.seed, &[stream]);
    let ci = bootstrap_ci(n, metric, opts.replicates, seed)?;
    Ok(MetricValue {
        point: Some(ci.point),
        ci_lo: Some(ci.lo),
        ci_hi: Some(ci.hi),
    })
}

/// The classification rows with bootstrap intervals.
pub fn classification_report(eval: &BinaryEval, opts: &ReportOptions) -> Result<MetricsReport> {
    let eval = BinaryEval::with_threshold(eval.scores.clone(), eval.labels.clone(), opts.threshold)?;
    let n = eval.scores.len();
    let on = |idx: &[usize]| eval.subset(idx);
    Ok(MetricsReport {
        auroc: Some(row(n, |i| auroc(&on(i)), opts, 0)?),
        auprc: Some(row(n, |i| Ok(pr_metrics(&on(i))?.auprc), opts, 1)?),
        ap: Some(row(n, |i| Ok(pr_metrics(&on(i))?.average_precision), opts, 2)?),
        f1: Some(row(n, |i| Ok(threshold_metrics(&on(i)).f1), opts, 3)?),
        specificity: Some(row(n, |i| defined(threshold_metrics(&on(i)).specificity, "specificity"), opts, 4)?),
        recall: Some(row(n, |i| defined(threshold_metrics(&on(i)).recall, "recall"), opts, 5)?),
        precision: Some(row(n, |i| defined(threshold_metrics(&on(i)).precision, "precision"), opts, 6)?),
        accuracy: Some(row(n, |i| defined(threshold_metrics(&on(i)).accuracy, "accuracy"), opts, 7)?),
        brier: Some(row(n, |i| brier(&on(i)), opts, 8)?),
        p_pos_test: eval.positives(),
        p_neg_test: eval.negatives(),
        ..Default::default()
    })
}

/// C-index (risk = negative restricted mean) and L1 losses with bootstrap intervals.
pub fn survival_report(
    curves: &[SurvivalCurve],
    labels: &[SurvivalLabel],
    opts: &ReportOptions,
) -> Result<MetricsReport> {
    if curves.len() != labels.len() {
        return Err(crate::error::shape_err!("{} curves vs {} labels", curves.len(), labels.len()));
    }
    let n = curves.len();
    let risks: Vec<f64> = curves.iter().map(|c| -c.restricted_mean()).collect();
    let pick = |idx: &[usize]| -> (Vec<SurvivalCurve>, Vec<SurvivalLabel>) {
        (
            idx.iter().map(|&i| curves[i].clone()).collect(),
            idx.iter().map(|&i| labels[i]).collect(),
        )
    };
    let scale = |v: f64, len: usize| if opts.l1_mean { v / len as f64 } else { v };
    let c_index = row(
        n,
        |idx| {
            let l: Vec<SurvivalLabel> = idx.iter().map(|&i| labels[i]).collect();
            let r: Vec<f64> = idx.iter().map(|&i| risks[i]).collect();
            concordance_index(&l, &r)
        },
        opts,
        9,
    )?;
    let l1_marginal = row(
        n,
        |idx| {
            let (c, l) = pick(idx);
            Ok(scale(l1_losses(&c, &l)?.marginal, idx.len()))
        },
        opts,
        10,
    )?;
    let l1_hinge = row(
        n,
        |idx| {
            let (c, l) = pick(idx);
            Ok(scale(l1_losses(&c, &l)?.hinge, idx.len()))
        },
        opts,
        11,
    )?;
    let events = labels.iter().filter(|l| !l.censored).count();
    Ok(MetricsReport {
        c_index: Some(c_index),
        l1_marginal: Some(l1_marginal),
        l1_hinge: Some(l1_hinge),
        p_pos_test: events,
        p_neg_test: n - events,
        ..Default::default()
    })
}
