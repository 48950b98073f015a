//! Invariants under randomized inputs.

use brw_lab_core::harness::{ks_one_sample, ks_weighted, plateau_fit, Estimate, Exec, Reference, RngStream, Sums};
use brw_lab_core::walk::LatticeLadder;
use brw_lab_core::StepDistribution;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn merge_order_does_not_change_results(n in 1u64..5000, chunk in 1u64..700, workers in 1usize..6, seed in 0u64..1000) {
        let stream = RngStream::named(seed, "tests/merge", 0);
        let f = |i: u64, acc: &mut Sums| {
            let x: f64 = stream.with_stream(i).rng().gen();
            acc.add(x.ln_1p() * 1e3);
            Ok(())
        };
        let one: Sums = Exec::new(1).run(n, f).unwrap();
        let many: Sums = Exec::new(workers).with_chunk(chunk).run(n, f).unwrap();
        let other: Sums = Exec::new(1).with_chunk(chunk).run(n, f).unwrap();
        prop_assert_eq!(format!("{many:?}"), format!("{other:?}"));
        let (a, b) = (one.estimate(n, "t", seed), many.estimate(n, "t", seed));
        prop_assert!((a.value - b.value).abs() <= 1e-12 * a.value.abs().max(1.0));
    }

    #[test]
    fn estimate_interval_brackets_value(v in -1e6f64..1e6, s in 0f64..1e3, n in 1u64..1_000_000) {
        let e = Estimate::new(v, s, n, "t", 0);
        prop_assert!(e.ci_low <= e.value && e.value <= e.ci_high);
        prop_assert!(e.stderr >= 0.0 && e.n_effective <= n as f64);
    }

    #[test]
    fn srw_renewal_is_floor_plus_one(u in 0f64..200.0) {
        let mut l = LatticeLadder::new(&StepDistribution::srw()).unwrap();
        prop_assert_eq!(l.r_minus(u), u.floor() + 1.0);
    }

    #[test]
    fn constant_curve_has_no_drift(c in 0.01f64..100.0, n in 4usize..20) {
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let f = plateau_fit(&xs, &vec![c; n], &vec![0.1 * c; n]).unwrap();
        prop_assert!(f.drift.abs() <= 1e-9 * c);
        prop_assert!(!f.flagged);
    }

    #[test]
    fn unit_weights_match_unweighted_ks(seed in 0u64..1000, n in 60usize..500) {
        let mut rng = RngStream::named(seed, "tests/ks", 0).rng();
        let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 3.0).collect();
        let r = Reference::Exponential { rate: 1.0 };
        let a = ks_one_sample(&xs, r).unwrap();
        let b = ks_weighted(&xs, &vec![2.5; n], r).unwrap();
        prop_assert!((a.statistic - b.statistic).abs() < 1e-12);
    }
}
