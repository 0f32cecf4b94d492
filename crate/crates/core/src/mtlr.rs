//! Multi-task logistic regression (MTLR) for individual survival distributions.
//!
//! Survival status over a grid `t_1 < ... < t_m` is a sequence
//! `y_i = [t_i >= d]`; the `m + 1` legal sequences are indexed by `k`, the
//! number of leading zeros, so the event falls in `[t_k, t_{k+1})` with
//! `t_0 = 0`. With per-time scores `s_i = theta_i . x`, sequence `k` has score
//! `f(x, k) = sum_{i > k} s_i` and probability `exp f(x, k) / sum_j exp f(x, j)`.
//!
//! Feature vectors passed to this module are already augmented: the last
//! component is a constant 1 whose column in `theta` is an unpenalized
//! intercept (see [`augment`]).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::rng::rng_for;
use crate::tensor::Tensor;

/// Strictly increasing event-time thresholds, in days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    tau: Vec<f64>,
}

impl TimeGrid {
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if tau.is_empty() {
            return Err(Error::InvalidArgument("time grid needs at least one point".into()));
        }
        if tau.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "time grid points must be finite and positive: {tau:?}"
            )));
        }
        if tau.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "time grid must be strictly increasing: {tau:?}"
            )));
        }
        Ok(Self { tau })
    }

    pub fn times(&self) -> &[f64] {
        &self.tau
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last(&self) -> f64 {
        *self.tau.last().expect("grid is non-empty")
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.tau
    }
}

/// Month-wise points over one year: 30, 60, ..., 360 days.
pub const MONTHLY_POINTS: [f64; 12] = [
    30.0, 60.0, 90.0, 120.0, 150.0, 180.0, 210.0, 240.0, 270.0, 300.0, 330.0, 360.0,
];

/// Union of `ceil(sqrt(n_uncensored))` nearest-rank quantiles of the
/// uncensored times (levels `k / (q + 1)`) with [`MONTHLY_POINTS`], rounded to
/// whole days and deduplicated.
pub fn build_time_grid(event_times: &[f64], censored: &[bool]) -> Result<TimeGrid> {
    if event_times.len() != censored.len() {
        return Err(shape_err!(
            "{} times but {} censoring flags",
            event_times.len(),
            censored.len()
        ));
    }
    let mut events: Vec<f64> = event_times
        .iter()
        .zip(censored)
        .filter(|(_, &c)| !c)
        .map(|(&t, _)| t)
        .collect();
    if events.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot build a time grid: every record is censored".into(),
        ));
    }
    if events.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite {
            location: "event times".into(),
        });
    }
    events.sort_by(f64::total_cmp);
    let n = events.len();
    let q = (n as f64).sqrt().ceil() as usize;
    let mut points: Vec<f64> = (1..=q)
        .map(|k| {
            let level = k as f64 / (q + 1) as f64;
            let rank = ((level * n as f64).ceil() as usize).clamp(1, n);
            events[rank - 1].round().max(1.0)
        })
        .collect();
    points.extend_from_slice(&MONTHLY_POINTS);
    points.sort_by(f64::total_cmp);
    points.dedup();
    TimeGrid::new(points)
}

/// Observed time (days) and right-censoring flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLabel {
    pub time: f64,
    pub censored: bool,
}

impl SurvivalLabel {
    pub fn new(time: f64, censored: bool) -> Result<Self> {
        if !time.is_finite() || time <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "survival time must be finite and positive, got {time}"
            )));
        }
        Ok(Self { time, censored })
    }

    pub fn event(time: f64) -> Result<Self> {
        Self::new(time, false)
    }
}

/// A label expressed over a grid as the set of consistent sequence indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodedLabel {
    /// Exactly one legal sequence: the event falls in interval `k`.
    Event { k: usize },
    /// Every sequence `k >= from` is consistent with surviving past the censoring time.
    Censored { from: usize },
}

impl EncodedLabel {
    pub fn consistent(&self, m: usize) -> std::ops::RangeInclusive<usize> {
        match *self {
            EncodedLabel::Event { k } => k..=k,
            EncodedLabel::Censored { from } => from..=m,
        }
    }

    /// The binary status sequence `y` for sequence index `k`.
    pub fn sequence_for(k: usize, m: usize) -> Vec<u8> {
        (1..=m).map(|i| u8::from(i > k)).collect()
    }

    pub fn sequences(&self, m: usize) -> Vec<Vec<u8>> {
        self.consistent(m).map(|k| Self::sequence_for(k, m)).collect()
    }
}

/// Uncensored: `y_i = [t_i >= d]`. Censored at `d`: every sequence with
/// `y_i = 0` for all `t_i <= d`.
pub fn encode_label(label: &SurvivalLabel, grid: &TimeGrid) -> EncodedLabel {
    let t = grid.times();
    if label.censored {
        EncodedLabel::Censored {
            from: t.iter().filter(|&&ti| ti <= label.time).count(),
        }
    } else {
        EncodedLabel::Event {
            k: t.iter().filter(|&&ti| ti < label.time).count(),
        }
    }
}

/// Appends the constant intercept feature.
pub fn augment(x: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + 1);
    v.extend_from_slice(x);
    v.push(1.0);
    v
}

/// Per-time weight vectors `theta [m, p + 1]` and the L2 weight `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct MtlrParams {
    pub theta: Tensor,
    pub c: f64,
}

impl MtlrParams {
    pub fn zeros(m: usize, n_features: usize, c: f64) -> Self {
        Self {
            theta: Tensor::zeros(&[m, n_features + 1]),
            c,
        }
    }

    pub fn m(&self) -> usize {
        self.theta.dim(0)
    }

    /// Width of augmented feature vectors.
    pub fn width(&self) -> usize {
        self.theta.dim(1)
    }
}

fn check_width(theta: &Tensor, x: &[f64]) -> Result<()> {
    if theta.ndim() != 2 || theta.dim(1) != x.len() {
        return Err(shape_err!(
            "theta {:?} incompatible with feature vector of length {}",
            theta.shape(),
            x.len()
        ));
    }
    Ok(())
}

/// Per-time scores `s_i = theta_i . x`.
fn time_scores(theta: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..theta.dim(0))
        .map(|i| theta.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `f(k)` for `k = 0..=m` from the time scores, as suffix sums.
fn sequence_scores(scores: &[f64]) -> Vec<f64> {
    let m = scores.len();
    let mut f = vec![0.0; m + 1];
    for k in (0..m).rev() {
        f[k] = f[k + 1] + scores[k];
    }
    f
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `f(x, k) = sum_{i = k + 1}^{m} theta_i . x`; `f(x, m) = 0`.
pub fn f_score(theta: &Tensor, x_aug: &[f64], k: usize) -> Result<f64> {
    check_width(theta, x_aug)?;
    let m = theta.dim(0);
    if k > m {
        return Err(Error::InvalidArgument(format!("sequence index {k} > m = {m}")));
    }
    Ok(sequence_scores(&time_scores(theta, x_aug))[k])
}

/// Log-probabilities of all `m + 1` legal sequences.
pub fn sequence_log_probs(theta: &Tensor, x_aug: &[f64]) -> Result<Vec<f64>> {
    check_width(theta, x_aug)?;
    let f = sequence_scores(&time_scores(theta, x_aug));
    let log_z = log_sum_exp(f.iter().copied());
    Ok(f.iter().map(|v| v - log_z).collect())
}

pub fn sequence_prob(theta: &Tensor, x_aug: &[f64], k: usize) -> Result<f64> {
    let lp = sequence_log_probs(theta, x_aug)?;
    lp.get(k)
        .map(|v| v.exp())
        .ok_or_else(|| Error::InvalidArgument(format!("sequence index {k} > m = {}", lp.len() - 1)))
}

/// A survival function sampled at `0 = t_0 < t_1 < ... < t_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl SurvivalCurve {
    pub fn new(grid: &TimeGrid, values_at_grid: &[f64]) -> Result<Self> {
        if values_at_grid.len() != grid.len() {
            return Err(shape_err!(
                "curve has {} values for a grid of {}",
                values_at_grid.len(),
                grid.len()
            ));
        }
        let mut times = vec![0.0];
        times.extend_from_slice(grid.times());
        let mut values = vec![1.0];
        values.extend_from_slice(values_at_grid);
        Ok(Self { times, values })
    }

    /// Linear interpolation between grid points, flat after the last one.
    pub fn at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let last = self.times.len() - 1;
        if t >= self.times[last] {
            return self.values[last];
        }
        let j = self.times.partition_point(|&ti| ti <= t);
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let (s0, s1) = (self.values[j - 1], self.values[j]);
        s0 + (s1 - s0) * (t - t0) / (t1 - t0)
    }

    /// Area under the interpolated curve on `[0, t_m]`.
    pub fn restricted_mean(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, s)| (t[1] - t[0]) * (s[0] + s[1]) / 2.0)
            .sum()
    }
}

/// `S(t_i) = sum_{k >= i} P(k)` for `i = 1..m`, with `S(0) = 1` prepended.
pub fn survival_curve(theta: &Tensor, x_aug: &[f64], grid: &TimeGrid) -> Result<SurvivalCurve> {
    if theta.dim(0) != grid.len() {
        return Err(shape_err!(
            "theta has {} rows for a grid of {}",
            theta.dim(0),
            grid.len()
        ));
    }
    let probs: Vec<f64> = sequence_log_probs(theta, x_aug)?
        .into_iter()
        .map(f64::exp)
        .collect();
    let m = grid.len();
    let mut surv = vec![0.0; m];
    let mut acc = 0.0;
    for i in (1..=m).rev() {
        acc += probs[i];
        surv[i - 1] = acc.min(1.0);
    }
    SurvivalCurve::new(grid, &surv)
}

/// Negative log-likelihood of one record, optionally accumulating
/// `d nll / d theta` and `d nll / d x`.
pub fn record_nll(
    theta: &Tensor,
    x_aug: &[f64],
    label: EncodedLabel,
    dtheta: Option<&mut [f64]>,
    dx: Option<&mut [f64]>,
) -> Result<f64> {
    check_width(theta, x_aug)?;
    let m = theta.dim(0);
    let q = x_aug.len();
    let range = label.consistent(m);
    if *range.end() > m || range.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "label {label:?} inconsistent with m = {m}"
        )));
    }
    let f = sequence_scores(&time_scores(theta, x_aug));
    let log_z = log_sum_exp(f.iter().copied());
    let log_a = log_sum_exp(f[range.clone()].iter().copied());
    let nll = log_z - log_a;
    if dtheta.is_none() && dx.is_none() {
        return Ok(nll);
    }
    // d nll / d s_j = sum_{k <= j} P(k) - sum_{k <= j, k in A} Q(k), j = 0..m-1
    let mut ds = vec![0.0; m];
    let mut cum_p = 0.0;
    let mut cum_q = 0.0;
    for j in 0..m {
        cum_p += (f[j] - log_z).exp();
        if range.contains(&j) {
            cum_q += (f[j] - log_a).exp();
        }
        ds[j] = cum_p - cum_q;
    }
    if let Some(dt) = dtheta {
        for (i, d) in ds.iter().enumerate() {
            for (g, xv) in dt[i * q..(i + 1) * q].iter_mut().zip(x_aug) {
                *g += d * xv;
            }
        }
    }
    if let Some(dx) = dx {
        for (i, d) in ds.iter().enumerate() {
            for (g, th) in dx.iter_mut().zip(theta.row(i)) {
                *g += d * th;
            }
        }
    }
    Ok(nll)
}

/// `(C / 2) * ||theta||^2` over the non-intercept columns, adding `C * theta` into `grad`.
pub fn l2_penalty(theta: &Tensor, c: f64, grad: Option<&mut [f64]>) -> f64 {
    let q = theta.dim(1);
    let mut pen = 0.0;
    for (idx, v) in theta.data().iter().enumerate() {
        if idx % q != q - 1 {
            pen += v * v;
        }
    }
    if let Some(g) = grad {
        for (idx, (gv, v)) in g.iter_mut().zip(theta.data()).enumerate() {
            if idx % q != q - 1 {
                *gv += c * v;
            }
        }
    }
    0.5 * c * pen
}

/// Regularized negative log-likelihood summed over the batch and its gradient.
pub fn nll_and_gradient(params: &MtlrParams, batch: &[(Vec<f64>, EncodedLabel)]) -> Result<(f64, Tensor)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty MTLR batch".into()));
    }
    let mut grad = Tensor::zeros(params.theta.shape());
    let mut total = 0.0;
    for (x, label) in batch {
        total += record_nll(&params.theta, x, *label, Some(grad.data_mut()), None)?;
    }
    total += l2_penalty(&params.theta, params.c, Some(grad.data_mut()));
    Ok((total, grad))
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub c_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            c_grid: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            folds: 5,
            seed: 0,
            tolerance: 1e-6,
            max_iterations: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DescentReport {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub objective: f64,
    pub converged: bool,
}

const LBFGS_HISTORY: usize = 10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion: approximate inverse Hessian applied to `grad`.
fn lbfgs_direction(grad: &[f64], history: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let a = dot(s, &q) / dot(y, s);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y)) = history.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), a) in history.iter().zip(alphas.iter().rev()) {
        let b = dot(y, &q) / dot(y, s);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q
}

/// Full-batch descent on the regularized objective: limited-memory BFGS
/// directions with Armijo backtracking, until the gradient norm drops below
/// `tolerance`.
pub fn minimize(
    params: &mut MtlrParams,
    batch: &[(Vec<f64>, EncodedLabel)],
    tolerance: f64,
    max_iterations: usize,
) -> Result<DescentReport> {
    let (mut obj, mut grad) = nll_and_gradient(params, batch)?;
    let mut history: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(LBFGS_HISTORY);
    let report = |it, grad: &Tensor, obj| {
        let gn = grad.sq_norm().sqrt();
        DescentReport {
            iterations: it,
            gradient_norm: gn,
            objective: obj,
            converged: gn < tolerance,
        }
    };
    for it in 0..max_iterations {
        if !obj.is_finite() {
            return Err(Error::Numerical(format!(
                "MTLR objective became {obj} at iteration {it} (C = {}, |theta| = {:.3e})",
                params.c,
                params.theta.sq_norm().sqrt()
            )));
        }
        if grad.sq_norm().sqrt() < tolerance {
            return Ok(report(it, &grad, obj));
        }
        let mut dir = lbfgs_direction(grad.data(), &history);
        let mut slope = -dot(grad.data(), &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = grad.data().to_vec();
            slope = -grad.sq_norm();
        }
        let mut step = if history.is_empty() {
            (1.0 / grad.sq_norm().sqrt()).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = params.clone();
            trial.theta.data_mut().iter_mut().zip(&dir).for_each(|(t, d)| *t -= step * d);
            let (tobj, tgrad) = nll_and_gradient(&trial, batch)?;
            if tobj < obj && tobj <= obj + 1e-4 * step * slope {
                accepted = Some((trial, tobj, tgrad));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, tobj, tgrad)) = accepted else {
            // no decrease representable in floating point
            return Ok(report(it, &grad, obj));
        };
        let s: Vec<f64> = trial.theta.data().iter().zip(params.theta.data()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = tgrad.data().iter().zip(grad.data()).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == LBFGS_HISTORY {
                history.remove(0);
            }
            history.push((s, y));
        }
        *params = trial;
        obj = tobj;
        grad = tgrad;
    }
    Ok(report(max_iterations, &grad, obj))
}

/// A linear MTLR model with its grid and the cross-validation trace.
#[derive(Debug, Clone)]
pub struct LinearMtlr {
    pub grid: TimeGrid,
    pub params: MtlrParams,
    /// `(C, mean held-out log-likelihood per record)` for every candidate.
    pub cv_scores: Vec<(f64, f64)>,
    pub report: DescentReport,
}

impl LinearMtlr {
    pub fn curve(&self, x: &[f64]) -> Result<SurvivalCurve> {
        survival_curve(&self.params.theta, &augment(x), &self.grid)
    }
}

/// Fits a linear MTLR model, choosing `C` by k-fold cross-validated log-likelihood.
pub fn fit_linear_mtlr(features: &[Vec<f64>], labels: &[SurvivalLabel], opts: &FitOptions) -> Result<LinearMtlr> {
    if features.len() != labels.len() {
        return Err(shape_err!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        ));
    }
    if opts.folds < 2 || features.len() < 2 * opts.folds {
        return Err(Error::InvalidArgument(format!(
            "need at least {} records for {}-fold cross-validation, got {}",
            2 * opts.folds,
            opts.folds,
            features.len()
        )));
    }
    if opts.c_grid.is_empty() || opts.c_grid.iter().any(|c| !(*c >= 0.0)) {
        return Err(Error::InvalidArgument(format!("invalid C grid {:?}", opts.c_grid)));
    }
    let p = features[0].len();
    if features.iter().any(|f| f.len() != p) {
        return Err(shape_err!("ragged feature rows"));
    }
    let times: Vec<f64> = labels.iter().map(|l| l.time).collect();
    let cens: Vec<bool> = labels.iter().map(|l| l.censored).collect();
    let grid = build_time_grid(&times, &cens)?;
    let data: Vec<(Vec<f64>, EncodedLabel)> = features
        .iter()
        .zip(labels)
        .map(|(x, l)| (augment(x), encode_label(l, &grid)))
        .collect();

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng_for(opts.seed, &[0xF01D]));
    let mut fold_of = vec![0; data.len()];
    for (pos, &idx) in order.iter().enumerate() {
        fold_of[idx] = pos % opts.folds;
    }

    let mut cv_scores = Vec::with_capacity(opts.c_grid.len());
    for &c in &opts.c_grid {
        let mut total_ll = 0.0;
        for fold in 0..opts.folds {
            let train: Vec<_> = data
                .iter()
                .zip(&fold_of)
                .filter(|(_, &f)| f != fold)
                .map(|(d, _)| d.clone())
                .collect();
            let mut params = MtlrParams::zeros(grid.len(), p, c);
            minimize(&mut params, &train, opts.tolerance, opts.max_iterations)?;
            for ((x, label), _) in data.iter().zip(&fold_of).filter(|(_, &f)| f == fold) {
                total_ll -= record_nll(&params.theta, x, *label, None, None)?;
            }
        }
        cv_scores.push((c, total_ll / data.len() as f64));
    }
    let best_c = cv_scores
        .iter()
        .fold(None::<(f64, f64)>, |best, &(c, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((c, s)),
        })
        .map(|(c, _)| c)
        .expect("non-empty C grid");

    let mut params = MtlrParams::zeros(grid.len(), p, best_c);
    let report = minimize(&mut params, &data, opts.tolerance, opts.max_iterations)?;
    Ok(LinearMtlr {
        grid,
        params,
        cv_scores,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_theta() -> Tensor {
        Tensor::new(vec![2, 1], vec![0.5, -0.3]).unwrap()
    }

    #[test]
    fn grid_from_nine_events() {
        let times: Vec<f64> = (1..=9).map(|i| 10.0 * i as f64).collect();
        let grid = build_time_grid(&times, &[false; 9]).unwrap();
        assert_eq!(grid.len(), 14);
        for t in [30.0, 50.0, 70.0, 60.0, 360.0] {
            assert!(grid.times().contains(&t));
        }
    }

    #[test]
    fn grid_from_single_event() {
        let grid = build_time_grid(&[100.0, 5.0], &[false, true]).unwrap();
        assert_eq!(grid.len(), 13);
        assert!(grid.times().contains(&100.0));
    }

    #[test]
    fn all_censored_grid_fails() {
        assert!(build_time_grid(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn label_encoding_examples() {
        let grid = TimeGrid::new(vec![30.0, 90.0, 365.0]).unwrap();
        let enc = |t, c| encode_label(&SurvivalLabel::new(t, c).unwrap(), &grid);
        assert_eq!(EncodedLabel::sequences(&enc(100.0, false), 3), vec![vec![0, 0, 1]]);
        assert_eq!(EncodedLabel::sequences(&enc(10.0, false), 3), vec![vec![1, 1, 1]]);
        assert_eq!(EncodedLabel::sequences(&enc(400.0, false), 3), vec![vec![0, 0, 0]]);
        assert_eq!(
            EncodedLabel::sequences(&enc(100.0, true), 3),
            vec![vec![0, 0, 1], vec![0, 0, 0]]
        );
        // an event exactly at a grid point counts as dead there
        assert_eq!(enc(90.0, false), EncodedLabel::Event { k: 1 });
        // censored exactly at a grid point means alive there
        assert_eq!(enc(90.0, true), EncodedLabel::Censored { from: 2 });
    }

    #[test]
    fn f_score_examples() {
        let th = toy_theta();
        assert!((f_score(&th, &[1.0], 0).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(f_score(&th, &[1.0], 1).unwrap(), -0.3);
        assert_eq!(f_score(&th, &[1.0], 2).unwrap(), 0.0);
        assert!(f_score(&th, &[1.0], 3).is_err());
        assert_eq!(f_score(&Tensor::zeros(&[4, 3]), &[1.0, 2.0, 1.0], 1).unwrap(), 0.0);
    }

    #[test]
    fn sequence_probability_examples() {
        // enumerate e^0.2, e^-0.3, e^0 and normalize
        let w = [0.2f64.exp(), (-0.3f64).exp(), 1.0];
        let z: f64 = w.iter().sum();
        let th = toy_theta();
        for k in 0..3 {
            let p = sequence_prob(&th, &[1.0], k).unwrap();
            assert!((p - w[k] / z).abs() < 1e-15);
        }
        assert!((sequence_prob(&th, &[1.0], 0).unwrap() - 0.4123).abs() < 5e-5);
        assert!((sequence_prob(&th, &[1.0], 1).unwrap() - 0.2501).abs() < 5e-5);
        assert!((sequence_prob(&th, &[1.0], 2).unwrap() - 0.3376).abs() < 5e-5);
        for k in 0..5 {
            assert!((sequence_prob(&Tensor::zeros(&[4, 2]), &[0.3, 1.0], k).unwrap() - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn survival_curve_examples() {
        let grid = TimeGrid::new(vec![10.0, 20.0]).unwrap();
        let c = survival_curve(&toy_theta(), &[1.0], &grid).unwrap();
        assert_eq!(c.values[0], 1.0);
        assert!((c.values[1] - 0.5877).abs() < 5e-5);
        assert!((c.values[2] - 0.3376).abs() < 5e-5);

        let grid = TimeGrid::new(vec![1.0, 2.0, 3.0]).unwrap();
        let c = survival_curve(&Tensor::zeros(&[3, 1]), &[1.0], &grid).unwrap();
        let want = [1.0, 0.75, 0.5, 0.25];
        for (a, b) in c.values.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_likelihood() {
        let params = MtlrParams::zeros(4, 2, 0.0);
        let batch = vec![(vec![0.7, -1.2, 1.0], EncodedLabel::Event { k: 2 })];
        let (obj, _) = nll_and_gradient(&params, &batch).unwrap();
        assert!((obj - 5f64.ln()).abs() < 1e-14);
        assert!(nll_and_gradient(&params, &[]).is_err());
    }

    #[test]
    fn curve_interpolation_and_mean() {
        let grid = TimeGrid::new(vec![1.0, 2.0, 4.0]).unwrap();
        let c = SurvivalCurve::new(&grid, &[0.5, 0.5, 0.0]).unwrap();
        assert_eq!(c.at(0.5), 0.75);
        assert_eq!(c.at(3.0), 0.25);
        assert_eq!(c.at(10.0), 0.0);
        // 0.75 + 0.5 + 0.5
        assert!((c.restricted_mean() - 1.75).abs() < 1e-15);
    }
}
