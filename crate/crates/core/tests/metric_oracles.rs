use ets_core::metrics::{
    auroc, bootstrap_ci, brier, classification_report, concordance_index, kaplan_meier, l1_losses, pr_metrics,
    survival_report, threshold_metrics, BinaryEval, ReportOptions,
};
use ets_core::mtlr::{SurvivalCurve, SurvivalLabel, TimeGrid};
use ets_core::rng::rng_for;
use proptest::prelude::*;
use rand::Rng;

fn eval(scores: &[f64], labels: &[u8]) -> BinaryEval {
    BinaryEval::new(scores.to_vec(), labels.iter().map(|&l| l == 1).collect()).unwrap()
}

/// Explicit pair enumeration, exact in rationals.
fn brute_auroc(e: &BinaryEval) -> f64 {
    let (mut twice_wins, mut pairs) = (0u64, 0u64);
    for (i, &li) in e.labels.iter().enumerate() {
        for (j, &lj) in e.labels.iter().enumerate() {
            if li && !lj {
                pairs += 1;
                twice_wins += match e.scores[i].partial_cmp(&e.scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice_wins as f64 / 2.0 / pairs as f64
}

fn brute_c_index(labels: &[SurvivalLabel], risks: &[f64]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if !labels[i].censored && labels[i].time < labels[j].time {
                pairs += 1;
                twice += if risks[i] > risks[j] {
                    2
                } else if risks[i] == risks[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / 2.0 / pairs as f64
}

fn random_eval(seed: u64, n: usize, levels: u32) -> BinaryEval {
    let mut rng = rng_for(seed, &[]);
    let labels: Vec<bool> = (0..n).map(|i| i < 2 || (i > 3 && rng.random_bool(0.4))).collect();
    let labels: Vec<bool> = labels.iter().enumerate().map(|(i, &l)| if i == 2 { false } else { l }).collect();
    // coarse scores force plenty of ties
    let scores = (0..n)
        .map(|i| {
            let bump = if labels[i] { 1 } else { 0 };
            f64::from(rng.random_range(0..levels) + bump) / f64::from(levels + 1)
        })
        .collect();
    BinaryEval::new(scores, labels).unwrap()
}

#[test]
fn auroc_equals_pair_enumeration() {
    for seed in 0..200 {
        let n = 3 + (seed as usize * 37) % 498;
        let e = random_eval(seed, n, 1 + (seed % 20) as u32);
        assert_eq!(auroc(&e).unwrap(), brute_auroc(&e), "seed {seed} n {n}");
    }
}

#[test]
fn auroc_examples() {
    assert_eq!(auroc(&eval(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0])).unwrap(), 1.0);
    assert_eq!(auroc(&eval(&[0.9, 0.8, 0.3, 0.2], &[1, 0, 1, 0])).unwrap(), 0.75);
    assert!(auroc(&eval(&[0.9, 0.8], &[1, 1])).is_err());
    let mut rng = rng_for(4, &[]);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.3)).collect();
    let a = auroc(&BinaryEval::new(scores, labels).unwrap()).unwrap();
    assert!((a - 0.5).abs() < 0.02, "{a}");
}

#[test]
fn pr_examples() {
    let pr = pr_metrics(&eval(&[0.9, 0.8, 0.3, 0.2], &[1, 0, 1, 0])).unwrap();
    assert_eq!(pr.average_precision, 0.5 * 1.0 + 0.5 * (2.0 / 3.0));
    assert!((pr.average_precision - 0.8333).abs() < 5e-5);
    assert_eq!(pr_metrics(&eval(&[0.9, 0.8, 0.3], &[1, 1, 0])).unwrap().average_precision, 1.0);
    let flat = pr_metrics(&eval(&[0.4; 5], &[1, 0, 0, 1, 0])).unwrap();
    assert_eq!(flat.average_precision, 0.4);
    assert!(pr_metrics(&eval(&[0.4, 0.2], &[0, 0])).is_err());
}

#[test]
fn threshold_examples() {
    let t = threshold_metrics(&eval(&[0.9, 0.8, 0.3, 0.2], &[1, 0, 1, 0]));
    assert_eq!(t.f1, 0.5);
    assert_eq!((t.recall, t.precision, t.specificity, t.accuracy), (Some(0.5), Some(0.5), Some(0.5), Some(0.5)));
    let perfect = threshold_metrics(&eval(&[0.9, 0.1], &[1, 0]));
    assert_eq!(perfect.f1, 1.0);
    assert_eq!(perfect.precision, Some(1.0));
    let none = threshold_metrics(&eval(&[0.1, 0.2], &[1, 0]));
    assert_eq!(none.precision, None);
    assert_eq!(none.f1, 0.0);
}

#[test]
fn brier_examples() {
    let b = brier(&eval(&[0.8, 0.4], &[1, 0])).unwrap();
    assert!((b - 0.10).abs() < 1e-15, "{b}");
    assert_eq!(brier(&eval(&[0.5, 0.5, 0.5], &[1, 0, 1])).unwrap(), 0.25);
    assert_eq!(brier(&eval(&[1.0, 0.0], &[1, 0])).unwrap(), 0.0);
}

#[test]
fn c_index_equals_pair_enumeration() {
    for seed in 0..300 {
        let mut rng = rng_for(seed, &[1]);
        let n = rng.random_range(2..=200);
        let labels: Vec<SurvivalLabel> = (0..n)
            .map(|_| SurvivalLabel::new(f64::from(rng.random_range(1..40)), rng.random_bool(0.35)).unwrap())
            .collect();
        let risks: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..15))).collect();
        let has_pair = (0..n).any(|i| !labels[i].censored && labels.iter().any(|l| labels[i].time < l.time));
        match concordance_index(&labels, &risks) {
            Ok(c) => assert_eq!(c, brute_c_index(&labels, &risks), "seed {seed}"),
            Err(_) => assert!(!has_pair),
        }
    }
}

#[test]
fn c_index_matches_auroc_for_two_time_points() {
    // events at t=1 are "positives", everyone else survives past them
    let mut rng = rng_for(8, &[]);
    let n = 300;
    let dead: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..50)) / 50.0).collect();
    let labels: Vec<SurvivalLabel> = dead
        .iter()
        .map(|&d| if d { SurvivalLabel::event(1.0) } else { SurvivalLabel::new(2.0, true) }.unwrap())
        .collect();
    let c = concordance_index(&labels, &scores).unwrap();
    let a = auroc(&BinaryEval::new(scores, dead).unwrap()).unwrap();
    assert_eq!(c, a);
}

#[test]
fn km_without_censoring_is_empirical() {
    let mut rng = rng_for(2, &[]);
    let times: Vec<f64> = (0..100).map(|_| f64::from(rng.random_range(1..30))).collect();
    let km = kaplan_meier(&times, &[true; 100]).unwrap();
    for t in 0..32 {
        let t = f64::from(t);
        let empirical = times.iter().filter(|&&x| x > t).count() as f64 / 100.0;
        assert!((km.at(t) - empirical).abs() < 1e-14);
    }
}

#[test]
fn l1_three_patient_hand_case() {
    let grid = TimeGrid::new(vec![1.0, 2.0, 4.0]).unwrap();
    // areas of the piecewise-linear curves on [0, 4]
    let a = SurvivalCurve::new(&grid, &[0.5, 0.0, 0.0]).unwrap(); // 0.75 + 0.25 + 0 = 1.0
    let b = SurvivalCurve::new(&grid, &[1.0, 1.0, 0.5]).unwrap(); // 1 + 1 + 1.5 = 3.5
    let c = SurvivalCurve::new(&grid, &[1.0, 0.5, 0.5]).unwrap(); // 1 + 0.75 + 1 = 2.75
    let labels = vec![
        SurvivalLabel::event(2.0).unwrap(),
        SurvivalLabel::new(3.0, true).unwrap(),
        SurvivalLabel::event(1.0).unwrap(),
    ];
    let loss = l1_losses(&[a, b, c], &labels).unwrap();
    // KM on (2 event, 3 censored, 1 event): S = 2/3 on [1,2), 1/3 on [2,3), 1/3 at 3
    // E_KM[T | T > 3] = 3 + 0 (no area past the last time)
    let hinge = 1.0 + 0.0 + 1.75;
    let marginal = 1.0 + 0.5 + 1.75;
    assert!((loss.hinge - hinge).abs() < 1e-12, "{loss:?}");
    assert!((loss.marginal - marginal).abs() < 1e-12, "{loss:?}");
    let censored_only = vec![SurvivalLabel::new(1.0, true).unwrap(); 3];
    let curves = vec![SurvivalCurve::new(&grid, &[1.0, 1.0, 1.0]).unwrap(); 3];
    assert!(l1_losses(&curves, &censored_only).is_err());
}

#[test]
fn bootstrap_interval_contains_point_estimate() {
    let mut rng = rng_for(21, &[]);
    let n = 500;
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    let scores: Vec<f64> = labels
        .iter()
        .map(|&l| (rng.random::<f64>() + if l { 0.4 } else { 0.0 }) / 1.4)
        .collect();
    let e = BinaryEval::new(scores, labels).unwrap();
    for run in 0..1000 {
        let ci = bootstrap_ci(n, |idx| auroc(&e.subset(idx)), 100, run).unwrap();
        assert!(ci.lo <= ci.point && ci.point <= ci.hi, "run {run}: {ci:?}");
    }
}

#[test]
fn bootstrap_redraws_one_class_resamples() {
    // two records: roughly half the resamples are one-class
    let e = eval(&[0.9, 0.1], &[1, 0]);
    let ci = bootstrap_ci(2, |idx| auroc(&e.subset(idx)), 200, 3).unwrap();
    assert_eq!((ci.lo, ci.hi), (1.0, 1.0));
}

#[test]
fn reports_serialize_table_rows() {
    let e = eval(&[0.9, 0.8, 0.3, 0.2, 0.6, 0.4], &[1, 0, 1, 0, 1, 0]);
    let opts = ReportOptions {
        replicates: 50,
        ..ReportOptions::default()
    };
    let r = classification_report(&e, &opts).unwrap();
    let json = serde_json::to_value(&r).unwrap();
    for key in ["auroc", "auprc", "ap", "f1", "specificity", "recall", "precision", "accuracy", "brier"] {
        for field in ["point", "ci_lo", "ci_hi"] {
            assert!(json[key].get(field).is_some(), "{key}.{field}");
        }
    }
    assert_eq!(json["p_pos_test"], 3);
    assert!(json.get("c_index").is_none());
    assert_eq!(r, classification_report(&e, &opts).unwrap());

    let grid = TimeGrid::new(vec![10.0, 20.0]).unwrap();
    let curves: Vec<SurvivalCurve> = (0..6)
        .map(|i| SurvivalCurve::new(&grid, &[1.0 - 0.1 * i as f64, 0.5 - 0.05 * i as f64]).unwrap())
        .collect();
    let labels: Vec<SurvivalLabel> = (0..6)
        .map(|i| SurvivalLabel::new(25.0 - 3.0 * i as f64, i % 3 == 0).unwrap())
        .collect();
    let s = survival_report(&curves, &labels, &opts).unwrap();
    assert_eq!(s.c_index.unwrap().point, Some(1.0));
    assert_eq!(s.p_pos_test, 4);
}

proptest! {
    #[test]
    fn auroc_invariant_under_monotone_transform(seed in 0u64..5000, scale in 0.1f64..10.0) {
        let e = random_eval(seed, 60, 12);
        let transformed: Vec<f64> = e.scores.iter().map(|s| (scale * s).exp() / (1.0 + (scale * s).exp())).collect();
        let t = BinaryEval::new(transformed, e.labels.clone()).unwrap();
        prop_assert_eq!(auroc(&e).unwrap(), auroc(&t).unwrap());
    }

    #[test]
    fn probability_metrics_in_unit_interval(seed in 0u64..5000) {
        let e = random_eval(seed, 40, 7);
        let pr = pr_metrics(&e).unwrap();
        let t = threshold_metrics(&e);
        for v in [auroc(&e).unwrap(), pr.auprc, pr.average_precision, t.f1, brier(&e).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        for v in [t.specificity, t.recall, t.precision, t.accuracy].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
