mod support;

use fedmlp::data::build_mask_plan;
use fedmlp::loss::{adjust_probs, ClassPriors};
use fedmlp::metrics::{auc, mean_average_precision};
use ndarray::{Array2, Axis};
use proptest::prelude::*;

fn adjust1(p: f64, pi1: f64) -> f64 {
    let priors = ClassPriors::new(vec![pi1], 1.0).unwrap();
    adjust_probs(Array2::from_elem((1, 1), p).view(), &priors).unwrap()[[0, 0]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn balanced_prior_is_identity(p in 0.0f64..=1.0) {
        let q = adjust1(p, 0.5);
        prop_assert!((q - p).abs() <= f64::EPSILON * p.abs().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn adjustment_is_strictly_increasing(a in 1e-6f64..1.0 - 1e-6, gap in 1e-6f64..0.5, pi1 in 0.001f64..0.999) {
        let b = (a + gap).min(1.0 - 1e-7);
        prop_assume!(b > a);
        prop_assert!(adjust1(a, pi1) < adjust1(b, pi1));
    }

    #[test]
    fn adjustment_preserves_range(p in 0.0f64..=1.0, pi1 in 0.001f64..0.999) {
        let q = adjust1(p, pi1);
        prop_assert!((0.0..=1.0).contains(&q));
        if p > 0.0 && p < 1.0 {
            prop_assert!(q > 0.0 && q < 1.0);
        }
        prop_assert!((q - support::adjust_oracle(p, pi1)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ranking_metrics_ignore_monotone_transforms(
        scores in prop::collection::vec(0.0f64..1.0, 4..60),
        labels in prop::collection::vec(any::<bool>(), 4..60),
        shift in -3.0f64..3.0,
        scale in 0.1f64..10.0,
    ) {
        let n = scores.len().min(labels.len());
        let mut y: Vec<f64> = labels[..n].iter().map(|&b| f64::from(u8::from(b))).collect();
        y[0] = 1.0;
        y[1] = 0.0;
        let s = Array2::from_shape_vec((n, 1), scores[..n].to_vec()).unwrap();
        let t = Array2::from_shape_vec((n, 1), y).unwrap();
        // exp is strictly increasing and keeps distinct inputs distinct here.
        let s2 = s.mapv(|v| (scale * v + shift).exp());
        let a1 = auc(s.view(), t.view()).unwrap().mean;
        let a2 = auc(s2.view(), t.view()).unwrap().mean;
        prop_assert_eq!(a1, a2);
        let m1 = mean_average_precision(s.view(), t.view()).unwrap().mean;
        let m2 = mean_average_precision(s2.view(), t.view()).unwrap().mean;
        prop_assert_eq!(m1, m2);
        prop_assert!((0.0..=1.0).contains(&a1) && (0.0..=1.0).contains(&m1));
    }

    #[test]
    fn metrics_ignore_sample_order(
        scores in prop::collection::vec(0.0f64..1.0, 4..40),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let n = scores.len();
        let mut r = support::rng(seed);
        let mut truth = support::binary(&mut r, (n, 1), 0.5);
        truth[[0, 0]] = 1.0;
        truth[[1, 0]] = 0.0;
        let s = Array2::from_shape_vec((n, 1), scores).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let s2 = s.select(Axis(0), &perm);
        let t2 = truth.select(Axis(0), &perm);
        let a1 = auc(s.view(), truth.view()).unwrap().mean;
        let a2 = auc(s2.view(), t2.view()).unwrap().mean;
        prop_assert!((a1 - a2).abs() < 1e-12);
    }
}

#[test]
fn mask_plans_hold_invariants_across_seeds() {
    for (k, c, m) in [(5, 5, 4), (5, 5, 1), (5, 5, 3), (3, 6, 4), (8, 4, 2)] {
        for seed in 0..120 {
            let plan = build_mask_plan(k, c, m, seed).unwrap();
            assert!(plan.missing.iter().all(|miss| miss.len() == m), "equal m");
            assert!(plan.missing.iter().all(|miss| miss.windows(2).all(|w| w[0] < w[1]) && miss.iter().all(|&x| x < c)));
            assert!(plan.annotators.iter().all(|a| !a.is_empty()), "class without annotator");
            assert!(plan.is_valid());
            if k == c && m == c - 1 {
                // Each client labels one class and every class is covered: a permutation.
                let mut owned: Vec<usize> = (0..k).map(|i| plan.active(i)[0]).collect();
                owned.sort_unstable();
                assert_eq!(owned, (0..c).collect::<Vec<_>>());
            }
        }
    }
    assert!(build_mask_plan(5, 5, 0, 0).is_err());
    assert!(build_mask_plan(2, 5, 4, 0).is_err());
}
