mod common;

use std::collections::BTreeSet;

use mqm_stability::assignment::{
    assign, assign_entropy_target, assign_no_grouping, assign_psxs_balanced, assign_system_balanced,
    min_entropy_of_layout, pair_assign, AssignmentError, AssignmentPlan, AssignmentSpec, ItemGrouping,
    LoadBalancing,
};
use mqm_stability::corpus::RatingDataset;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn all_docs(ds: &RatingDataset) -> Vec<usize> {
    (0..ds.documents().len()).collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn entropy_targets_on_the_reference_layouts() {
    let split = common::split_layout();
    let plan = assign_entropy_target(&split, &all_docs(&split), 0.38, 0.03, &mut rng(1), 1000).unwrap();
    assert!((plan.entropy - 0.38).abs() <= 0.03, "{}", plan.entropy);
    plan.check(&split).unwrap();
    let err = assign_entropy_target(&split, &all_docs(&split), 0.30, 0.03, &mut rng(1), 1000).unwrap_err();
    assert!(matches!(err, AssignmentError::TargetUnreachable { .. }), "{err}");

    let rotation = common::rotation_layout();
    let plan = assign_entropy_target(&rotation, &all_docs(&rotation), 0.51, 0.03, &mut rng(2), 1000).unwrap();
    assert!((plan.entropy - 0.51).abs() <= 0.03, "{}", plan.entropy);
    plan.check(&rotation).unwrap();

    for ds in [&split, &rotation] {
        let plan = assign_entropy_target(ds, &all_docs(ds), 1.0, 0.03, &mut rng(3), 1000).unwrap();
        assert!(plan.entropy >= 0.97, "{}", plan.entropy);
    }
}

#[test]
fn balanced_plans_reach_the_entropy_ceiling() {
    // The ceiling is at most 1, so 0.99 is within 0.01 of it.
    for ds in [common::split_layout(), common::rotation_layout()] {
        for seed in 0..10 {
            let plan = assign_psxs_balanced(&ds, &all_docs(&ds), &mut rng(seed)).unwrap();
            assert!(plan.entropy >= 0.99, "{}", plan.entropy);
        }
    }
}

#[test]
fn entropy_is_reported_for_the_workload() {
    let ds = common::split_layout();
    let plan = assign_entropy_target(&ds, &all_docs(&ds), 0.6, 0.03, &mut rng(4), 1000).unwrap();
    let w = plan.rater_workload(&ds);
    let h = mqm_stability::stats::normalized_entropy(&w, ds.raters().len()).unwrap();
    assert!((h - plan.entropy).abs() < 1e-12);
}

#[test]
fn no_grouping_spreads_items_while_psxs_keeps_them_together() {
    let ds = common::layout_dataset(&[(vec!["a".into(), "b".into(), "c".into()], 1)], 4);
    for seed in 0..20 {
        let plan = assign_no_grouping(&ds, &[0], LoadBalancing::FullyBalanced, &mut rng(seed)).unwrap();
        let raters: BTreeSet<_> = plan.items.iter().map(|i| i.raters[0]).collect();
        // four items dealt over three raters always touch all three
        assert_eq!(raters.len(), 3);
        let psxs = assign_psxs_balanced(&ds, &[0], &mut rng(seed)).unwrap();
        assert!(psxs.items.iter().all(|i| i.raters == psxs.items[0].raters));
    }
}

#[test]
fn system_balanced_differs_from_psxs() {
    let ds = common::layout_dataset(&[(vec!["a".into(), "b".into(), "c".into()], 6)], 3);
    let mut split_docs = 0;
    for seed in 0..10 {
        let plan = assign_system_balanced(&ds, &all_docs(&ds), &mut rng(seed)).unwrap();
        for chunk in plan.items.chunks(3) {
            if chunk.iter().any(|i| i.raters != chunk[0].raters) {
                split_docs += 1;
            }
        }
    }
    assert!(split_docs > 0);
}

#[test]
fn min_entropy_matches_brute_force_on_small_layouts() {
    // Exhaustively assign every document (not every bucket) and compare.
    let layout = vec![(vec![0, 1, 2], 2u64), (vec![1, 2, 3], 2)];
    let docs: Vec<&[usize]> = vec![&[0, 1, 2], &[0, 1, 2], &[1, 2, 3], &[1, 2, 3]];
    let mut best = f64::INFINITY;
    for code in 0..81u32 {
        let mut counts = [0u64; 4];
        let mut c = code;
        for raters in &docs {
            counts[raters[(c % 3) as usize]] += 1;
            c /= 3;
        }
        best = best.min(mqm_stability::stats::entropy_of_counts(&counts, 4));
    }
    assert!((min_entropy_of_layout(&layout, 4).unwrap() - best).abs() < 1e-12);
}

fn eligible(plan: &AssignmentPlan, ds: &RatingDataset) -> bool {
    plan.check(ds).is_ok()
}

/// Random bucket layouts with distinct rater sets of size 3.
fn layouts() -> impl Strategy<Value = (Vec<(Vec<String>, usize)>, usize)> {
    (3usize..8, 1usize..5, 1usize..4).prop_flat_map(|(pool, n_buckets, n_sys)| {
        let sets: Vec<Vec<usize>> = (0..pool)
            .flat_map(|a| (a + 1..pool).flat_map(move |b| (b + 1..pool).map(move |c| vec![a, b, c])))
            .collect();
        let n_buckets = n_buckets.min(sets.len());
        (
            proptest::sample::subsequence(sets, n_buckets),
            proptest::collection::vec(1usize..9, n_buckets),
        )
            .prop_map(move |(sets, sizes)| {
                let buckets = sets
                    .into_iter()
                    .zip(sizes)
                    .map(|(set, n)| (set.into_iter().map(|r| format!("r{r}")).collect(), n))
                    .collect();
                (buckets, n_sys)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn plans_respect_buckets_and_groupings((layout, n_sys) in layouts(), seed in 0u64..1000) {
        let ds = common::layout_dataset(&layout, n_sys);
        let docs = all_docs(&ds);
        let psxs = assign_psxs_balanced(&ds, &docs, &mut rng(seed)).unwrap();
        prop_assert!(eligible(&psxs, &ds));
        prop_assert_eq!(psxs.items.len(), docs.len() * n_sys);

        let flat = assign_no_grouping(&ds, &docs, LoadBalancing::FullyBalanced, &mut rng(seed)).unwrap();
        prop_assert!(eligible(&flat, &ds));

        let sb = assign_system_balanced(&ds, &docs, &mut rng(seed)).unwrap();
        prop_assert!(eligible(&sb, &ds));
        for b in ds.buckets() {
            for s in 0..n_sys {
                let counts: Vec<usize> = b.raters.iter().map(|&r| {
                    sb.items.iter().filter(|i| i.system == s && i.raters[0] == r && b.docs.contains(&i.doc)).count()
                }).collect();
                let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
                prop_assert!(hi - lo <= 1, "{:?}", counts);
            }
        }

        let pairs = pair_assign(&ds, &docs, ItemGrouping::PseudoSideBySide, LoadBalancing::FullyBalanced, &mut rng(seed)).unwrap();
        prop_assert!(eligible(&pairs, &ds));
    }

    #[test]
    fn plans_are_deterministic((layout, n_sys) in layouts(), seed in 0u64..1000) {
        let ds = common::layout_dataset(&layout, n_sys);
        let docs = all_docs(&ds);
        let spec = AssignmentSpec {
            grouping: ItemGrouping::NoGrouping,
            balancing: LoadBalancing::EntropyTarget { target: 0.7, tolerance: 0.05 },
            ..AssignmentSpec::default()
        };
        let a = assign(&ds, &docs, &spec, &mut rng(seed));
        let b = assign(&ds, &docs, &spec, &mut rng(seed));
        prop_assert_eq!(&a, &b);
        if let Ok(plan) = a {
            prop_assert!((plan.entropy - 0.7).abs() <= 0.05);
            prop_assert!(eligible(&plan, &ds));
        }
    }

    #[test]
    fn subsample_respects_quotas((layout, n_sys) in layouts(), n in 1usize..20, seed in 0u64..1000) {
        let ds = common::layout_dataset(&layout, n_sys);
        match mqm_stability::assignment::subsample_documents(&ds, n, &mut rng(seed)) {
            Ok(docs) => {
                prop_assert_eq!(docs.len(), n);
                let base = n / ds.buckets().len();
                for b in ds.buckets() {
                    let k = docs.iter().filter(|d| b.docs.contains(d)).count();
                    prop_assert!(k == base || k == base + 1);
                }
            }
            Err(AssignmentError::QuotaExceedsBucket { .. } | AssignmentError::InvalidDocumentCount { .. }) => {}
            Err(e) => prop_assert!(false, "{}", e),
        }
    }
}
