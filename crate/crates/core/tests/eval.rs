use gzrd_core::eval::*;
use gzrd_core::sim::Task;
use gzrd_core::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn s(score: f64, positive: bool) -> Scored {
    Scored { score, positive }
}

/// Random scores on a coarse grid so ties are common.
fn random_scored(seed: u64, n: usize) -> Vec<Scored> {
    let mut r = gzrd_core::rng::stream(seed, 0);
    let mut v: Vec<Scored> = (0..n)
        .map(|_| {
            let positive = r.random_bool(0.4);
            let bump = if positive { 3 } else { 0 };
            s((r.random_range(0..20) + bump) as f64 / 23.0, positive)
        })
        .collect();
    v[0].positive = true;
    v
}

/// Counts by direct enumeration.
fn counts(x: &[Scored], t: f64) -> (usize, usize, usize, usize) {
    let tp = x.iter().filter(|e| e.positive && e.score >= t).count();
    let fp = x.iter().filter(|e| !e.positive && e.score >= t).count();
    let fn_ = x.iter().filter(|e| e.positive && e.score < t).count();
    (tp, fp, x.len() - tp - fp - fn_, fn_)
}

/// PR points by recounting at every distinct threshold, O(n²).
fn pr_oracle(x: &[Scored]) -> Vec<(f64, f64, f64)> {
    let mut ts: Vec<f64> = x.iter().map(|e| e.score).collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    ts.into_iter()
        .map(|t| {
            let (tp, fp, _, fn_) = counts(x, t);
            let p = if tp + fp == 0 {
                0.0
            } else {
                tp as f64 / (tp + fp) as f64
            };
            (t, p, tp as f64 / (tp + fn_) as f64)
        })
        .collect()
}

fn auc_oracle(x: &[Scored]) -> f64 {
    let pts = pr_oracle(x);
    let mut prev = (0.0, pts[0].1);
    let mut a = 0.0;
    for &(_, p, r) in &pts {
        a += (r - prev.0) * (p + prev.1) * 0.5;
        prev = (r, p);
    }
    a
}

fn p_at_r_oracle(x: &[Scored], target: f64) -> (f64, f64) {
    let pts = pr_oracle(x);
    let &(t, p, _) = pts.iter().find(|&&(_, _, r)| r >= target).unwrap();
    (p, t)
}

#[test]
fn counts_match_enumeration() {
    for seed in 0..1000 {
        let x = random_scored(seed, 1 + (seed as usize % 40));
        for t in [0.0, 0.25, 0.5, 0.75, 1.01] {
            let c = confusion(&x, t);
            assert_eq!((c.tp, c.fp, c.tn, c.fn_), counts(&x, t));
            let acc = (c.tp + c.tn) as f64 / x.len() as f64;
            assert_eq!(c.accuracy(), acc);
            if c.tp + c.fp > 0 && c.tp + c.fn_ > 0 && c.tp > 0 {
                let (p, r) = (c.precision(), c.recall());
                assert!((c.f1() - 2.0 * p * r / (p + r)).abs() < 1e-12);
                assert!(!c.f1_undefined());
            }
        }
    }
}

#[test]
fn curve_auc_and_precision_at_recall_match_oracles() {
    for seed in 0..1000 {
        let x = random_scored(seed, 2 + (seed as usize % 60));
        let c = pr_curve(&x).unwrap();
        let o = pr_oracle(&x);
        assert_eq!(c.thresholds.len(), o.len());
        for (i, &(t, p, r)) in o.iter().enumerate() {
            assert_eq!(c.thresholds[i], t);
            assert!((c.precision[i] - p).abs() < 1e-12);
            assert!((c.recall[i] - r).abs() < 1e-12);
        }
        assert_eq!(*c.recall.last().unwrap(), 1.0);
        assert!((c.auc() - auc_oracle(&x)).abs() < 1e-12);
        for target in [0.1, 0.5, 0.9, 1.0] {
            let (p, t) = precision_at_recall(&x, target).unwrap();
            let (po, to) = p_at_r_oracle(&x, target);
            assert_eq!(t, to);
            assert!((p - po).abs() < 1e-12);
        }
    }
}

#[test]
fn auc_extremes() {
    let sep: Vec<_> = (0..50).map(|i| s(i as f64, i >= 30)).collect();
    assert_eq!(auc(&sep).unwrap(), 1.0);
    let tied: Vec<_> = (0..50).map(|i| s(0.5, i % 5 == 0)).collect();
    assert!((auc(&tied).unwrap() - 0.2).abs() < 1e-12);
    let neg: Vec<_> = (0..5).map(|_| s(0.3, false)).collect();
    assert!(matches!(auc(&neg), Err(Error::UndefinedMetric(_))));
    assert!(binary_metrics(&neg, 0.5).unwrap().auc.is_none());
    assert!(matches!(precision_at_recall(&sep, 1.5), Err(Error::Config(_))));
    assert!(auc(&[s(f64::NAN, true)]).is_err());
}

#[test]
fn f1_undefined_without_predicted_or_actual_positives() {
    let c = confusion(&[s(0.1, false), s(0.2, false)], 0.5);
    assert!(c.f1_undefined());
    assert_eq!(c.f1(), 0.0);
}

#[test]
fn threshold_sweep_is_consistent() {
    for seed in 0..200 {
        let x = random_scored(seed, 40);
        let c = pr_curve(&x).unwrap();
        for (i, &t) in c.thresholds.iter().enumerate() {
            assert_eq!(c.counts[i], confusion(&x, t));
            let m = binary_metrics(&x, t).unwrap();
            assert_eq!(m.confusion, c.counts[i]);
        }
        // Lowering the threshold never loses a true positive.
        assert!(c.counts.windows(2).all(|w| w[1].tp >= w[0].tp && w[1].fp >= w[0].fp));
    }
}

#[test]
fn interpolated_precision_never_rises_with_recall() {
    for seed in 0..200 {
        let x = random_scored(seed, 30);
        let ps: Vec<f64> = (0..=20)
            .map(|k| interpolated_precision_at_recall(&x, k as f64 / 20.0).unwrap())
            .collect();
        assert!(ps.windows(2).all(|w| w[1] <= w[0]));
        for k in 0..=20 {
            let r = k as f64 / 20.0;
            assert!(ps[k] >= precision_at_recall(&x, r).unwrap().0);
        }
    }
}

fn example(probs: Vec<f64>, label: usize, medium: &str, span: Option<f64>) -> ScoredExample {
    ScoredExample {
        probs,
        label,
        meta: ExampleMeta {
            scenario: "s".into(),
            mode: "m".into(),
            medium: medium.into(),
            direction: "ltr".into(),
        },
        gaze_span: span,
    }
}

#[test]
fn multiclass_confusion_matches_enumeration() {
    let mut r = gzrd_core::rng::stream(4, 0);
    for _ in 0..100 {
        let k = r.random_range(2..8);
        let ex: Vec<_> = (0..r.random_range(1..80))
            .map(|_| {
                let mut p: Vec<f64> = (0..k).map(|_| r.random::<f64>()).collect();
                let z: f64 = p.iter().sum();
                p.iter_mut().for_each(|v| *v /= z);
                example(p, r.random_range(0..k), "print", None)
            })
            .collect();
        let mc = multiclass_confusion(&ex, k).unwrap();
        for t in 0..k {
            for q in 0..k {
                let n = ex.iter().filter(|e| e.label == t && e.predicted() == q).count();
                assert_eq!(mc.counts[t][q], n);
            }
        }
        let norm = mc.normalized();
        let mut recalls = Vec::new();
        for t in 0..k {
            let row: usize = mc.counts[t].iter().sum();
            if row > 0 {
                assert!((norm[t].iter().sum::<f64>() - 1.0).abs() < 1e-12);
                recalls.push(mc.counts[t][t] as f64 / row as f64);
            }
        }
        let bal = recalls.iter().sum::<f64>() / recalls.len() as f64;
        assert!((mc.balanced_accuracy() - bal).abs() < 1e-12);
    }
    assert!(multiclass_confusion(&[example(vec![0.5, 0.5], 3, "x", None)], 2).is_err());
}

#[test]
fn breakdown_matches_filtered_metrics() {
    let mut r = gzrd_core::rng::stream(5, 0);
    let media = ["print", "digital", "none"];
    let ex: Vec<_> = (0..300)
        .map(|i| {
            let p: f64 = r.random();
            let span = if i % 7 == 0 {
                None
            } else {
                Some(r.random_range(0.0..40.0))
            };
            example(vec![1.0 - p, p], (i % 3 != 0) as usize, media[i % 3], span)
        })
        .collect();
    let by_medium = breakdown(&ex, BreakdownKey::Medium, 0.5).unwrap();
    assert_eq!(by_medium.len(), 3);
    for m in media {
        let sub: Vec<Scored> = ex.iter().filter(|e| e.meta.medium == m).map(|e| e.binary()).collect();
        assert_eq!(by_medium[m], binary_metrics(&sub, 0.5).unwrap());
    }
    let by_span = breakdown(&ex, BreakdownKey::GazeSpan, 0.5).unwrap();
    let total: usize = by_span.values().map(|m| m.n).sum();
    assert_eq!(total, ex.len());
    assert_eq!(
        by_span["unknown"].n,
        ex.iter().filter(|e| e.gaze_span.is_none()).count()
    );
    let low = ex.iter().filter(|e| matches!(e.gaze_span, Some(v) if v < 5.0)).count();
    assert_eq!(by_span["[0,5)"].n, low);
}

#[test]
fn report_is_consistent() {
    let ex: Vec<_> = (0..40)
        .map(|i| {
            let p = (i as f64 + 0.5) / 40.0;
            example(vec![1.0 - p, p], (i >= 20) as usize, "print", Some(3.0))
        })
        .collect();
    let rep = report(
        &ex,
        Task::Binary,
        gzrd_core::model::ModalitySet::ALL,
        Some(BreakdownKey::Medium),
    )
    .unwrap();
    assert_eq!(rep.binary.accuracy, 1.0);
    assert_eq!(rep.balanced_accuracy, 1.0);
    assert_eq!(rep.confusion_counts, vec![vec![20, 0], vec![0, 20]]);
    assert_eq!(rep.binary.auc, Some(1.0));
    let json = serde_json::to_string(&rep).unwrap();
    assert!(json.contains("\"fn\":0"));
    let back: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, rep);
}

#[test]
fn csv_has_one_row_per_threshold() {
    let x = random_scored(1, 30);
    let c = pr_curve(&x).unwrap();
    let mut out = Vec::new();
    c.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "threshold,precision,recall");
    assert_eq!(lines.len(), c.thresholds.len() + 1);
}

fn scored_strategy() -> impl Strategy<Value = Vec<Scored>> {
    prop::collection::vec((0u8..30, any::<bool>()), 1..80).prop_map(|v| {
        let mut out: Vec<Scored> = v.into_iter().map(|(k, p)| s(k as f64 / 29.0, p)).collect();
        out[0].positive = true;
        out
    })
}

proptest! {
    #[test]
    fn auc_is_in_unit_interval(x in scored_strategy()) {
        let a = auc(&x).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn strictly_monotone_rescaling_changes_nothing(x in scored_strategy()) {
        let y: Vec<Scored> = x.iter().map(|e| s((3.0 * e.score - 1.0).exp(), e.positive)).collect();
        prop_assert!((auc(&x).unwrap() - auc(&y).unwrap()).abs() < 1e-12);
        for r in [0.3, 0.9] {
            prop_assert_eq!(precision_at_recall(&x, r).unwrap().0, precision_at_recall(&y, r).unwrap().0);
        }
        let cx = pr_curve(&x).unwrap();
        let cy = pr_curve(&y).unwrap();
        prop_assert_eq!(cx.counts, cy.counts);
    }

    #[test]
    fn order_of_examples_changes_nothing(x in scored_strategy(), seed in any::<u64>()) {
        let mut y = x.clone();
        y.shuffle(&mut gzrd_core::rng::stream(seed, 0));
        prop_assert_eq!(auc(&x).unwrap(), auc(&y).unwrap());
        prop_assert_eq!(binary_metrics(&x, 0.5).unwrap(), binary_metrics(&y, 0.5).unwrap());
    }
}
