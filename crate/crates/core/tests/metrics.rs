//! Metric properties against brute-force oracles.

mod support;

use gammaspot::metrics::{
    chamfer, evaluate_point_sets, match_points, mean_var, score_image, KdTree, MatchConfig,
    MatchStrategy, PenaltyConfig, PointSet,
};
use proptest::prelude::*;
use support::oracles::{brute_chamfer, linear_nearest};

fn points(max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(
        (0.0..100.0f64, 0.0..100.0f64).prop_map(|(x, y)| [x, y]),
        1..=max,
    )
}

/// Points on a coarse lattice so exact ties and coincident points occur.
fn lattice_points(max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(
        (0..8u8, 0..8u8).prop_map(|(x, y)| [x as f64, y as f64]),
        0..=max,
    )
}

/// Largest one-to-one matching by exhaustive search over prediction subsets.
fn brute_max_matching(truth: &[[f64; 2]], pred: &[[f64; 2]], r: f64) -> usize {
    fn go(t: usize, truth: &[[f64; 2]], pred: &[[f64; 2]], used: &mut Vec<bool>, r2: f64) -> usize {
        if t == truth.len() {
            return 0;
        }
        let mut best = go(t + 1, truth, pred, used, r2);
        for p in 0..pred.len() {
            let d2 = (truth[t][0] - pred[p][0]).powi(2) + (truth[t][1] - pred[p][1]).powi(2);
            if !used[p] && d2 <= r2 {
                used[p] = true;
                best = best.max(1 + go(t + 1, truth, pred, used, r2));
                used[p] = false;
            }
        }
        best
    }
    go(0, truth, pred, &mut vec![false; pred.len()], r * r)
}

proptest! {
    #[test]
    fn chamfer_matches_double_loop(a in points(40), b in points(40)) {
        let got = chamfer(&PointSet::new(a.clone()), &PointSet::new(b.clone())).unwrap();
        prop_assert!((got - brute_chamfer(&a, &b)).abs() <= 1e-9);
    }

    #[test]
    fn chamfer_is_symmetric_and_nonnegative(a in points(30), b in points(30)) {
        let ab = chamfer(&PointSet::new(a.clone()), &PointSet::new(b.clone())).unwrap();
        let ba = chamfer(&PointSet::new(b), &PointSet::new(a)).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
    }

    #[test]
    fn chamfer_is_translation_invariant(a in points(20), b in points(20), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
        let shift = |v: &[[f64; 2]]| v.iter().map(|p| [p[0] + dx, p[1] + dy]).collect::<Vec<_>>();
        let base = chamfer(&PointSet::new(a.clone()), &PointSet::new(b.clone())).unwrap();
        let moved = chamfer(&PointSet::new(shift(&a)), &PointSet::new(shift(&b))).unwrap();
        prop_assert!((base - moved).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn kd_tree_agrees_with_scan(targets in points(300), qs in points(50)) {
        let tree = KdTree::build(&targets);
        for q in qs {
            let (d, i) = tree.nearest(&q).unwrap();
            let (want, _) = linear_nearest(q, &targets).unwrap();
            prop_assert_eq!(d, want);
            prop_assert_eq!(linear_nearest(q, &targets[i..=i]).unwrap().0, want);
        }
    }

    #[test]
    fn kd_tree_handles_duplicates(targets in lattice_points(200), q in (0..8u8, 0..8u8)) {
        prop_assume!(!targets.is_empty());
        let q = [q.0 as f64, q.1 as f64];
        let (d, _) = KdTree::build(&targets).nearest(&q).unwrap();
        prop_assert_eq!(d, linear_nearest(q, &targets).unwrap().0);
    }

    #[test]
    fn matching_counts_are_consistent(truth in lattice_points(8), pred in lattice_points(8), r in 0.0..3.0f64) {
        let (t, p) = (PointSet::new(truth.clone()), PointSet::new(pred.clone()));
        let greedy = match_points(&t, &p, &MatchConfig { radius: r, strategy: MatchStrategy::Greedy });
        let best = match_points(&t, &p, &MatchConfig { radius: r, strategy: MatchStrategy::MaxCardinality });
        for c in [greedy, best] {
            prop_assert_eq!(c.tp + c.fn_, truth.len());
            prop_assert_eq!(c.tp + c.fp, pred.len());
            prop_assert!((0.0..=1.0).contains(&c.f1()) && (0.0..=1.0).contains(&c.tpr()));
        }
        prop_assert_eq!(best.tp, brute_max_matching(&truth, &pred, r));
        prop_assert!(greedy.tp <= best.tp);
        // Greedy is a maximal matching, so it finds at least half the optimum.
        prop_assert!(2 * greedy.tp >= best.tp);
    }

    #[test]
    fn report_aggregates_per_image_scores(sets in prop::collection::vec((lattice_points(6), lattice_points(6)), 1..10)) {
        let pairs: Vec<_> = sets.iter().map(|(a, b)| (PointSet::new(a.clone()), PointSet::new(b.clone()))).collect();
        let pen = PenaltyConfig::new(8);
        let report = evaluate_point_sets(&pairs, &pen, &MatchConfig::default()).unwrap();
        let scores: Vec<f64> = pairs.iter().map(|(t, p)| score_image(t, p, &pen)).collect();
        prop_assert_eq!(&report.per_image_scores, &scores);
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        prop_assert!((report.chamfer_mean - mean).abs() <= 1e-9);
        prop_assert!((report.chamfer_var - var).abs() <= 1e-9 * var.max(1.0));
    }
}

#[test]
fn known_distances() {
    let a = PointSet::new(vec![[0.0, 0.0]]);
    let b = PointSet::new(vec![[3.0, 4.0]]);
    assert_eq!(chamfer(&a, &b).unwrap(), 10.0);
    assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    // Each direction sums its own nearest distances: 5 + 5 one way, 5 back.
    let two = PointSet::new(vec![[0.0, 0.0], [6.0, 8.0]]);
    assert_eq!(chamfer(&two, &b).unwrap(), 15.0);
}

#[test]
fn penalty_cases() {
    let pen = PenaltyConfig::<f64>::new(200);
    let three = PointSet::new(vec![[1.0, 1.0], [2.0, 5.0], [9.0, 9.0]]);
    let empty = PointSet::default();
    assert_eq!(score_image(&three, &empty, &pen), 75.0);
    assert_eq!(score_image(&empty, &three, &pen), 75.0);
    assert_eq!(score_image(&empty, &empty, &pen), 0.0);
    assert!(chamfer(&three, &empty).is_err());
}

#[test]
fn f32_scores_track_f64() {
    let a: Vec<[f64; 2]> = (0..30)
        .map(|i| [i as f64 * 1.7 % 60.0, i as f64 * 3.1 % 60.0])
        .collect();
    let b: Vec<[f64; 2]> = (0..25)
        .map(|i| [i as f64 * 2.3 % 60.0, i as f64 * 0.9 % 60.0])
        .collect();
    let d64 = chamfer(&PointSet::new(a.clone()), &PointSet::new(b.clone())).unwrap();
    let d32 = chamfer(
        &PointSet::<f32>::from_f64(&a),
        &PointSet::<f32>::from_f64(&b),
    )
    .unwrap();
    assert!((f64::from(d32) - d64).abs() <= 1e-5 * d64);
}

#[test]
fn mean_var_of_empty_is_an_error() {
    assert!(mean_var::<f64>(&[]).is_err());
    assert_eq!(mean_var(&[2.0, 4.0]).unwrap(), (3.0, 1.0));
}
