use crate::error::{shape_err, Error, Result};
use crate::mtlr::{SurvivalCurve, SurvivalLabel};

/// Harrell's C over comparable pairs: `i` has an observed event and
/// `d_i < d_j`. Concordant when `risk_i > risk_j`; risk ties count one half.
///
/// Runs in `O(n log n)` with a Fenwick tree over risk ranks.
pub fn concordance_index(labels: &[SurvivalLabel], risks: &[f64]) -> Result<f64> {
    if labels.len() != risks.len() {
        return Err(shape_err!("{} labels vs {} risks", labels.len(), risks.len()));
    }
    if risks.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite {
            location: "risk scores".into(),
        });
    }
    let n = labels.len();
    // dense risk ranks 1..=r
    let mut sorted_risks = risks.to_vec();
    sorted_risks.sort_by(f64::total_cmp);
    sorted_risks.dedup();
    let rank = |r: f64| sorted_risks.partition_point(|&v| v < r) + 1;
    let mut tree = vec![0u64; sorted_risks.len() + 1];
    let add = |tree: &mut Vec<u64>, mut i: usize| {
        while i < tree.len() {
            tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    };
    let prefix = |tree: &Vec<u64>, mut i: usize| {
        let mut s = 0;
        while i > 0 {
            s += tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| labels[b].time.total_cmp(&labels[a].time));
    let (mut concordant, mut tied, mut comparable) = (0u64, 0u64, 0u64);
    let mut inserted = 0u64;
    let mut g = 0;
    while g < n {
        let t = labels[order[g]].time;
        let mut end = g;
        while end < n && labels[order[end]].time == t {
            end += 1;
        }
        // the tree holds exactly the subjects with time > t
        for &i in &order[g..end] {
            if labels[i].censored {
                continue;
            }
            let r = rank(risks[i]);
            let below = prefix(&tree, r - 1);
            let at_or_below = prefix(&tree, r);
            concordant += below;
            tied += at_or_below - below;
            comparable += inserted;
        }
        for &i in &order[g..end] {
            add(&mut tree, rank(risks[i]));
            inserted += 1;
        }
        g = end;
    }
    if comparable == 0 {
        return Err(Error::InvalidArgument("C-index: no comparable pairs".into()));
    }
    Ok((concordant as f64 + 0.5 * tied as f64) / comparable as f64)
}

/// Product-limit estimate at every distinct observed time.
#[derive(Debug, Clone, PartialEq)]
pub struct KaplanMeier {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KaplanMeier {
    /// Right-continuous step function; 1 before the first time.
    pub fn at(&self, t: f64) -> f64 {
        let j = self.times.partition_point(|&ti| ti <= t);
        if j == 0 {
            1.0
        } else {
            self.survival[j - 1]
        }
    }

    pub fn has_events(&self) -> bool {
        self.events.iter().any(|&e| e > 0)
    }

    /// Integral of the step function over `[from, last observed time]`.
    pub fn area_from(&self, from: f64) -> f64 {
        let Some(&last) = self.times.last() else {
            return 0.0;
        };
        if from >= last {
            return 0.0;
        }
        let mut area = 0.0;
        let mut t = from;
        let mut s = self.at(from);
        for (&ti, &si) in self.times.iter().zip(&self.survival) {
            if ti <= from {
                continue;
            }
            area += s * (ti - t);
            t = ti;
            s = si;
        }
        area
    }
}

/// Kaplan-Meier estimator; `events[i]` is true when subject `i` had the event.
/// Censored subjects leave the risk set without contributing a factor.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<KaplanMeier> {
    if times.len() != events.len() {
        return Err(shape_err!("{} times vs {} event flags", times.len(), events.len()));
    }
    if times.is_empty() {
        return Err(Error::InvalidArgument("Kaplan-Meier of an empty sample".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite {
            location: "Kaplan-Meier times".into(),
        });
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut km = KaplanMeier {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut at_risk = times.len();
    let mut s = 1.0;
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut d = 0;
        let mut leaving = 0;
        while i < order.len() && times[order[i]] == t {
            d += usize::from(events[order[i]]);
            leaving += 1;
            i += 1;
        }
        if d > 0 {
            s *= (at_risk - d) as f64 / at_risk as f64;
        }
        km.times.push(t);
        km.survival.push(s);
        km.at_risk.push(at_risk);
        km.events.push(d);
        at_risk -= leaving;
    }
    Ok(km)
}

/// `E[T | T > c]` under the Kaplan-Meier curve, restricted to the last observed time.
pub fn km_conditional_mean(km: &KaplanMeier, c: f64) -> f64 {
    let s = km.at(c);
    if s <= 0.0 {
        return c;
    }
    c + km.area_from(c) / s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Losses {
    pub hinge: f64,
    pub marginal: f64,
}

/// L1 hinge and L1 marginal losses, summed over patients.
///
/// The predicted time is the restricted mean of each curve. Events add
/// `|e - d|` to both. A subject censored at `c` adds `max(0, c - e)` to the
/// hinge loss and `|e - E_KM[T | T > c]|` to the marginal loss, with the
/// Kaplan-Meier curve fitted on the evaluation cohort itself.
pub fn l1_losses(curves: &[SurvivalCurve], labels: &[SurvivalLabel]) -> Result<L1Losses> {
    if curves.len() != labels.len() {
        return Err(shape_err!("{} curves vs {} labels", curves.len(), labels.len()));
    }
    let times: Vec<f64> = labels.iter().map(|l| l.time).collect();
    let events: Vec<bool> = labels.iter().map(|l| !l.censored).collect();
    let km = kaplan_meier(&times, &events)?;
    if !km.has_events() {
        return Err(Error::InvalidArgument(
            "L1 marginal loss needs at least one observed event".into(),
        ));
    }
    let mut out = L1Losses {
        hinge: 0.0,
        marginal: 0.0,
    };
    for (curve, label) in curves.iter().zip(labels) {
        let predicted = curve.restricted_mean();
        if label.censored {
            out.hinge += (label.time - predicted).max(0.0);
            out.marginal += (predicted - km_conditional_mean(&km, label.time)).abs();
        } else {
            let e = (predicted - label.time).abs();
            out.hinge += e;
            out.marginal += e;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mtlr::TimeGrid;

    fn labels(times: &[f64], censored: &[bool]) -> Vec<SurvivalLabel> {
        times
            .iter()
            .zip(censored)
            .map(|(&t, &c)| SurvivalLabel::new(t, c).unwrap())
            .collect()
    }

    #[test]
    fn c_index_examples() {
        let l = labels(&[1.0, 2.0, 3.0], &[false; 3]);
        assert_eq!(concordance_index(&l, &[3.0, 2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(concordance_index(&l, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(concordance_index(&l, &[5.0; 3]).unwrap(), 0.5);
        let all_censored = labels(&[1.0, 2.0], &[true, true]);
        assert!(concordance_index(&all_censored, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn km_examples() {
        let km = kaplan_meier(&[1.0, 2.0, 3.0], &[true, false, true]).unwrap();
        assert_eq!(km.survival, vec![2.0 / 3.0, 2.0 / 3.0, 0.0]);
        let km = kaplan_meier(&[4.0, 1.0], &[false, false]).unwrap();
        assert!(km.survival.iter().all(|&s| s == 1.0));
        let km = kaplan_meier(&[3.0, 1.0, 2.0, 4.0], &[true; 4]).unwrap();
        assert_eq!(km.survival, vec![0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn km_conditional_mean_hand_case() {
        let km = kaplan_meier(&[1.0, 2.0, 3.0], &[true, false, true]).unwrap();
        // S = 1 on [0,1), 2/3 on [1,3), 0 after. From c = 2: area 2/3, S(2) = 2/3.
        assert!((km_conditional_mean(&km, 2.0) - 3.0).abs() < 1e-15);
        assert_eq!(km_conditional_mean(&km, 5.0), 5.0);
    }

    #[test]
    fn hinge_examples() {
        let d = 50.0;
        let grid = TimeGrid::new(vec![d - 1e-9, d]).unwrap();
        let step = SurvivalCurve::new(&grid, &[1.0, 0.0]).unwrap();
        let l = labels(&[d], &[false]);
        assert!(l1_losses(&[step.clone()], &l).unwrap().hinge < 1e-9);

        let flat = SurvivalCurve::new(&TimeGrid::new(vec![100.0]).unwrap(), &[1.0]).unwrap();
        let l = labels(&[40.0, 80.0], &[true, false]);
        let loss = l1_losses(&[flat.clone(), flat], &l).unwrap();
        // censored at 40 with predicted 100: no hinge; event at 80: |100 - 80|
        assert!((loss.hinge - 20.0).abs() < 1e-12);
    }
}
