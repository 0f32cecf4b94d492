use crate::error::{shape_err, Error, Result};

/// Scores in `[0, 1]` against binary labels, with a decision threshold.
#[derive(Debug, Clone)]
pub struct BinaryEval {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub threshold: f64,
}

impl BinaryEval {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        Self::with_threshold(scores, labels, 0.5)
    }

    pub fn with_threshold(scores: Vec<f64>, labels: Vec<bool>, threshold: f64) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(shape_err!("{} scores vs {} labels", scores.len(), labels.len()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                location: "classification scores".into(),
            });
        }
        Ok(Self {
            scores,
            labels,
            threshold,
        })
    }

    /// The sub-evaluation on `indices` (with repetition), for resampling.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            scores: indices.iter().map(|&i| self.scores[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            threshold: self.threshold,
        }
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.labels.len() - self.positives()
    }
}

/// Mid-ranks (1-based) with ties sharing their average rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged
        let r = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney estimate of `P(score_pos > score_neg) + P(tie) / 2`.
pub fn auroc(eval: &BinaryEval) -> Result<f64> {
    let n_pos = eval.positives();
    let n_neg = eval.negatives();
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(format!(
            "AUROC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let ranks = midranks(&eval.scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(&eval.labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrMetrics {
    pub auprc: f64,
    pub average_precision: f64,
}

/// Precision-recall summaries over descending distinct-score thresholds.
///
/// AP is the step sum `sum (R_k - R_{k-1}) P_k`; AUPRC is the trapezoidal
/// area over the same points, starting from `(recall 0, precision 1)`.
pub fn pr_metrics(eval: &BinaryEval) -> Result<PrMetrics> {
    let n_pos = eval.positives();
    if n_pos == 0 {
        return Err(Error::InvalidArgument("precision-recall needs a positive".into()));
    }
    let mut order: Vec<usize> = (0..eval.scores.len()).collect();
    order.sort_by(|&a, &b| eval.scores[b].total_cmp(&eval.scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_r, mut prev_p) = (0.0, 1.0);
    let mut ap = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = eval.scores[order[i]];
        while i < order.len() && eval.scores[order[i]] == s {
            if eval.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let r = tp as f64 / n_pos as f64;
        let p = tp as f64 / (tp + fp) as f64;
        ap += (r - prev_r) * p;
        area += (r - prev_r) * (p + prev_p) / 2.0;
        prev_r = r;
        prev_p = p;
    }
    Ok(PrMetrics {
        auprc: area,
        average_precision: ap,
    })
}

/// Confusion-table metrics; `None` marks a ratio with a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdMetrics {
    pub f1: f64,
    pub specificity: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Metrics at `eval.threshold`; a score at or above the threshold predicts positive.
/// F1 is 0 when there are no true positives.
pub fn threshold_metrics(eval: &BinaryEval) -> ThresholdMetrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in eval.scores.iter().zip(&eval.labels) {
        match (s >= eval.threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    ThresholdMetrics {
        f1: ratio(2 * tp, 2 * tp + fp + fn_).unwrap_or(0.0),
        specificity: ratio(tn, tn + fp),
        recall: ratio(tp, tp + fn_),
        precision: ratio(tp, tp + fp),
        accuracy: ratio(tp + tn, tp + tn + fp + fn_),
    }
}

/// Mean squared error between scores and 0/1 labels.
pub fn brier(eval: &BinaryEval) -> Result<f64> {
    if eval.scores.is_empty() {
        return Err(Error::InvalidArgument("Brier score of an empty set".into()));
    }
    let sse: f64 = eval
        .scores
        .iter()
        .zip(&eval.labels)
        .map(|(&s, &l)| {
            let d = s - if l { 1.0 } else { 0.0 };
            d * d
        })
        .sum();
    Ok(sse / eval.scores.len() as f64)
}
