use gradcon::eval::{auroc, f1_at_threshold, f1_max, histogram_overlap};
use proptest::prelude::*;

fn brute_auroc(inl: &[f64], out: &[f64]) -> f64 {
    let mut s = 0.0;
    for &o in out {
        for &i in inl {
            s += if o > i {
                1.0
            } else if o == i {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (inl.len() * out.len()) as f64
}

/// Scores drawn from a small grid so ties are common.
fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-20i32..20).prop_map(|v| v as f64 / 4.0), 1..40)
}

fn continuous() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn auroc_matches_pairwise(inl in scores(), out in scores()) {
        let fast = auroc(&inl, &out).unwrap();
        prop_assert!((fast - brute_auroc(&inl, &out)).abs() < 1e-12);
    }

    #[test]
    fn auroc_matches_pairwise_continuous(inl in continuous(), out in continuous()) {
        prop_assert!((auroc(&inl, &out).unwrap() - brute_auroc(&inl, &out)).abs() < 1e-12);
    }

    #[test]
    fn auroc_invariant_under_increasing_maps(inl in scores(), out in scores()) {
        let a = auroc(&inl, &out).unwrap();
        let f = |v: &f64| (v / 3.0).exp() * 2.0 + 7.0;
        let g = |v: &f64| v * v * v + 0.5;
        let b = auroc(&inl.iter().map(f).collect::<Vec<_>>(), &out.iter().map(f).collect::<Vec<_>>()).unwrap();
        let c = auroc(&inl.iter().map(g).collect::<Vec<_>>(), &out.iter().map(g).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(a, c);
    }

    #[test]
    fn auroc_complement(inl in scores(), out in scores()) {
        let a = auroc(&inl, &out).unwrap();
        let b = auroc(&out, &inl).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f1_max_matches_exhaustive(inl in scores(), out in scores()) {
        let best = f1_max(&inl, &out).unwrap();
        // every distinct score and every gap between them
        let mut pooled: Vec<f64> = inl.iter().chain(&out).copied().collect();
        pooled.sort_by(f64::total_cmp);
        pooled.dedup();
        let mut exhaustive = f1_at_threshold(&inl, &out, pooled[0] - 1.0).unwrap();
        for t in &pooled {
            exhaustive = exhaustive.max(f1_at_threshold(&inl, &out, *t).unwrap());
        }
        prop_assert!((best.f1 - exhaustive).abs() < 1e-12);
        prop_assert!((f1_at_threshold(&inl, &out, best.threshold).unwrap() - best.f1).abs() < 1e-12);
    }

    #[test]
    fn overlap_symmetric(a in continuous(), b in continuous(), bins in 2usize..120) {
        prop_assert_eq!(histogram_overlap(&a, &b, bins).unwrap(), histogram_overlap(&b, &a, bins).unwrap());
    }

    #[test]
    fn overlap_affine_covariant(a in scores(), b in scores(), k in -3i32..4, shift in -16i32..16) {
        // power-of-two scales and grid shifts keep bin assignment exact
        let scale = 2f64.powi(k);
        let map = |v: &f64| v * scale + shift as f64 / 4.0;
        let ma: Vec<f64> = a.iter().map(map).collect();
        let mb: Vec<f64> = b.iter().map(map).collect();
        prop_assert_eq!(histogram_overlap(&a, &b, 10).unwrap(), histogram_overlap(&ma, &mb, 10).unwrap());
    }

    #[test]
    fn overlap_bounded(a in continuous(), b in continuous()) {
        let o = histogram_overlap(&a, &b, 100).unwrap();
        prop_assert!((0.0..=100.0).contains(&o));
    }
}

#[test]
fn identical_lists_overlap_fully() {
    let a: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
    assert_eq!(histogram_overlap(&a, &a, 100).unwrap(), 100.0);
}
