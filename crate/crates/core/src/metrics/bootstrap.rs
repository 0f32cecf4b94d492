use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Point estimate with a two-sided 95% percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Linear-interpolation percentile of sorted values, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile bootstrap over `n` units.
///
/// `metric` receives resampled indices (with replacement). A replicate whose
/// metric fails, e.g. a one-class resample for AUROC, is redrawn from the same
/// replicate stream; at most `10 * replicates` draws are made in total.
pub fn bootstrap_ci<F>(n: usize, metric: F, replicates: usize, seed: u64) -> Result<ConfidenceInterval>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    if n == 0 {
        return Err(Error::InvalidArgument("bootstrap over an empty sample".into()));
    }
    if replicates == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one replicate".into()));
    }
    let all: Vec<usize> = (0..n).collect();
    let point = metric(&all)?;
    let cap = 10 * replicates;
    let mut draws = 0;
    let mut values = Vec::with_capacity(replicates);
    let mut idx = vec![0; n];
    for r in 0..replicates {
        let mut rng = rng_for(seed, &[r as u64]);
        loop {
            if draws == cap {
                return Err(Error::Numerical(format!(
                    "bootstrap gave up after {cap} draws with {} usable replicates",
                    values.len()
                )));
            }
            draws += 1;
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
            if let Ok(v) = metric(&idx) {
                if v.is_finite() {
                    values.push(v);
                    break;
                }
            }
        }
    }
    values.sort_by(f64::total_cmp);
    Ok(ConfidenceInterval {
        point,
        lo: percentile(&values, 0.025),
        hi: percentile(&values, 0.975),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_metric_collapses() {
        let ci = bootstrap_ci(20, |_| Ok(0.42), 200, 1).unwrap();
        assert_eq!((ci.point, ci.lo, ci.hi), (0.42, 0.42, 0.42));
    }

    #[test]
    fn deterministic_under_seed() {
        let data: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin()).collect();
        let mean = |idx: &[usize]| Ok(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64);
        let a = bootstrap_ci(50, mean, 300, 9).unwrap();
        let b = bootstrap_ci(50, mean, 300, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.lo <= a.point && a.point <= a.hi);
    }

    #[test]
    fn cap_exhaustion_is_an_error() {
        let r = bootstrap_ci(5, |idx| if idx.len() == 5 && idx == [0, 1, 2, 3, 4] { Ok(1.0) } else { Err(Error::InvalidArgument("no".into())) }, 10, 3);
        assert!(r.is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.0);
        assert_eq!(percentile(&v, 0.125), 0.5);
    }
}
