mod common;

use common::{oracle_cl, random_table, ALL_STRATEGIES};
use dsdkit_core::trcl::{
    cl_report, confident_learning, temporal_adjust, trcl_pipeline, CleaningConfig, CombineMode,
    PredictionTable,
};
use proptest::prelude::*;

fn reversed(t: &PredictionTable) -> PredictionTable {
    let mut rows = t.rows().to_vec();
    rows.reverse();
    PredictionTable::new(t.num_classes(), rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selection_matches_brute_force(seed in 0u64..1_000_000, s in 0usize..4, union in any::<bool>()) {
        let t = random_table(seed, 80, 5);
        let cfg = CleaningConfig {
            strategy: ALL_STRATEGIES[s],
            combine_mode: if union { CombineMode::Union } else { CombineMode::Intersection },
            ..Default::default()
        };
        match (oracle_cl(&t, &cfg), confident_learning(&t, &cfg)) {
            (None, Err(_)) => {}
            (Some(o), Ok(g)) => {
                prop_assert_eq!(&g.confusion, &o.confusion);
                let got: Vec<_> = g.flagged.iter().map(|f| (f.sample_id, f.suggested_label)).collect();
                let want: Vec<_> = o.flagged.into_iter().collect();
                prop_assert_eq!(got, want);
            }
            (o, g) => prop_assert!(false, "oracle {} library {}", o.is_some(), g.is_ok()),
        }
    }

    #[test]
    fn protected_classes_never_flagged(seed in 0u64..1_000_000, s in 0usize..4, p in 0usize..2) {
        let t = random_table(seed, 80, 4);
        let mut cfg = CleaningConfig { strategy: ALL_STRATEGIES[s], ..Default::default() };
        cfg.protected_classes.insert(p);
        if let Ok(r) = trcl_pipeline(&t, &cfg) {
            prop_assert!(r.flagged.iter().all(|f| f.noisy_label != p));
        }
    }

    #[test]
    fn row_order_does_not_matter(seed in 0u64..1_000_000, s in 0usize..4) {
        let t = random_table(seed, 80, 5);
        let cfg = CleaningConfig { strategy: ALL_STRATEGIES[s], ..Default::default() };
        let a = trcl_pipeline(&t, &cfg).ok().map(|r| r.flagged);
        let b = trcl_pipeline(&reversed(&t), &cfg).ok().map(|r| r.flagged);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn zero_alpha_is_plain_cl(seed in 0u64..1_000_000, s in 0usize..4, iters in 1usize..4) {
        let t = random_table(seed, 80, 5);
        let cfg = CleaningConfig { strategy: ALL_STRATEGIES[s], alpha: 0.0, iterations: iters, ..Default::default() };
        let a = cl_report(&t, &cfg).ok().map(|r| r.flagged);
        let b = trcl_pipeline(&t, &cfg).ok().map(|r| r.flagged);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn adjustment_only_raises_neighbours(seed in 0u64..1_000_000, alpha in 0.0f64..1.0) {
        let t = random_table(seed, 60, 4);
        let Ok(pass) = confident_learning(&t, &CleaningConfig::default()) else { return Ok(()) };
        let a = temporal_adjust(&t, &pass.flagged, alpha).unwrap();
        for (old, new) in t.rows().iter().zip(a.rows()) {
            for (p, q) in old.probs.iter().zip(&new.probs) {
                prop_assert!(q >= p && *q <= p.max(1.0));
                prop_assert!(*q <= p * (1.0 + alpha) + 1e-15);
            }
        }
    }
}
