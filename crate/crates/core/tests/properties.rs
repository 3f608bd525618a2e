use std::collections::HashSet;

use knockout::missingness::{calibrate_rate, enumerate_patterns};
use knockout::nn::random_gradient_checks;
use knockout::schema::{Normalization, Side};
use proptest::prelude::*;

fn normalization() -> impl Strategy<Value = Normalization> {
    prop_oneof![
        (-50.0..50.0f64, 0.01..20.0f64).prop_map(|(mean, std)| Normalization::Zscore { mean, std }),
        (-50.0..50.0f64, 0.01..100.0f64)
            .prop_map(|(lo, w)| Normalization::Scale01 { lo, hi: lo + w }),
        (-50.0..50.0f64, any::<bool>()).prop_map(|(shift, up)| Normalization::Scale0inf {
            shift,
            side: if up { Side::Upper } else { Side::Lower },
        }),
        Just(Normalization::None),
    ]
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

proptest! {
    #[test]
    fn normalization_round_trips(n in normalization(), x in -1e3..1e3f64) {
        let back = n.invert(n.apply(x));
        prop_assert!((back - x).abs() <= 1e-9 * x.abs().max(1.0), "{n:?}: {x} -> {back}");
    }

    #[test]
    fn calibrated_rate_leaves_p_clean_batches_untouched(d in 1usize..40, p in 0.01..0.99f64) {
        let r = calibrate_rate(d, p).unwrap();
        prop_assert!((0.0..1.0).contains(&r));
        prop_assert!(((1.0 - r).powi(d as i32) - p).abs() < 1e-12);
    }

    #[test]
    fn enumeration_is_exhaustive_and_unique(d in 1usize..9, k in 0usize..9) {
        let k = k.min(d);
        let patterns = enumerate_patterns(d, k).unwrap();
        let expected: usize = (0..=k).map(|j| binomial(d, j)).sum();
        prop_assert_eq!(patterns.len(), expected);
        let distinct: HashSet<Vec<bool>> = patterns.iter().map(|m| m.bits().to_vec()).collect();
        prop_assert_eq!(distinct.len(), expected);
        prop_assert!(patterns.iter().all(|m| m.len() == d && m.popcount() <= k));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradients_match_central_differences(root in any::<u64>()) {
        let checks = random_gradient_checks(2, root).unwrap();
        for c in checks {
            prop_assert!(c.max_rel_error < 1e-4, "{c:?}");
        }
    }
}
