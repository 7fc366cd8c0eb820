mod common;

use mqm_stability::experiment::{generate_synthetic, SyntheticSpec};
use mqm_stability::stats::{
    entropy_of_counts, kendall_tau_b, pairwise_p_values, rater_agreement, rater_distribution,
    AgreementGranularity, StatsError,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Kendall tau-b from the textbook formula over all index pairs.
fn tau_b_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut c, mut d, mut tx, mut ty) = (0.0f64, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => tx += 1.0,
                (false, true) => ty += 1.0,
                _ if dx * dy > 0.0 => c += 1.0,
                _ => d += 1.0,
            }
        }
    }
    let denom = ((c + d + tx) * (c + d + ty)).sqrt();
    (denom > 0.0).then(|| (c - d) / denom)
}

proptest! {
    #[test]
    fn p_values_are_valid_and_symmetric(
        sums in proptest::collection::vec(proptest::collection::vec(0.0f64..10.0, 6), 2..5),
        seed in 0u64..100,
    ) {
        let p = pairwise_p_values(&sums, 200, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for (i, row) in p.iter().enumerate() {
            prop_assert_eq!(row[i], 1.0);
            for (j, &v) in row.iter().enumerate() {
                prop_assert!(v > 0.0 && v <= 1.0);
                prop_assert_eq!(v, p[j][i]);
            }
        }
    }

    #[test]
    fn tau_matches_textbook_formula(
        pairs in proptest::collection::vec((0u8..4, 0u8..4), 2..9),
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        match (kendall_tau_b(&x, &y), tau_b_oracle(&x, &y)) {
            (Ok(t), Some(o)) => prop_assert!((t - o).abs() < 1e-12, "{} vs {}", t, o),
            (Err(StatsError::UndefinedTau), None) => {}
            (got, want) => prop_assert!(false, "{:?} vs {:?}", got, want),
        }
    }

    #[test]
    fn entropy_is_normalized(counts in proptest::collection::vec(0u64..50, 2..8)) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let h = entropy_of_counts(&counts, counts.len());
        prop_assert!((0.0..=1.0).contains(&h));
        let nonzero = counts.iter().filter(|&&c| c > 0).count();
        if nonzero == 1 {
            prop_assert_eq!(h, 0.0);
        }
        if counts.iter().all(|&c| c == counts[0]) {
            prop_assert!((h - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn agreeing_raters_have_unit_tau() {
    let spec = SyntheticSpec {
        n_docs: 6,
        ..SyntheticSpec::default()
    }
    .noiseless();
    let ds = generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for g in [AgreementGranularity::SingleDocument, AgreementGranularity::AllShared] {
        let report = rater_agreement(&ds, g);
        // two disjoint buckets of three raters
        assert_eq!(report.pairs.len(), 6);
        assert!(report.pairs.iter().all(|p| (p.tau - 1.0).abs() < 1e-12), "{report:?}");
        assert_eq!(report.grand_mean, Some(1.0));
    }
}

#[test]
fn single_rater_dataset_has_no_pairs_but_a_histogram() {
    let ds = common::layout_dataset(&[(vec!["solo".into()], 3)], 2);
    let report = rater_agreement(&ds, AgreementGranularity::AllShared);
    assert!(report.pairs.is_empty());
    assert_eq!(report.grand_mean, None);
    let edges: Vec<f64> = (0..=5).map(f64::from).collect();
    let h = rater_distribution(&ds, "solo", &edges).unwrap();
    assert_eq!(h.n, 6);
    assert_eq!(h.counts.iter().sum::<u64>() + h.below + h.above, 6);
    assert!(matches!(
        rater_distribution(&ds, "nobody", &edges),
        Err(StatsError::UnknownRater(_))
    ));
}
