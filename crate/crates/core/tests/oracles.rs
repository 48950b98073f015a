//! Exact and cross-estimator checks against known values.

use brw_lab_core::brw_sim::{global_min, simulate_tree, BarrierPolicy};
use brw_lab_core::harness::{ks_one_sample, ks_two_sample, plateau_fit, Reference, RngStream};
use brw_lab_core::models::validate_boundary;
use brw_lab_core::spine_sim::{direct_min_tail, estimate_min_tail, forward_min_tail, many_to_one_check, ForwardConfig, PathFunctional};
use brw_lab_core::walk::{
    min_survival_exact, renewal_identity_grid, renewal_minus, LatticeLadder, RenewalMethod,
};
use brw_lab_core::{make_spec, Exec, Family, StepDistribution};
use rand::Rng;

#[test]
fn boundary_residuals_vanish() {
    for p in [0.6, 0.8, 1.0] {
        let r = validate_boundary(&make_spec(Family::GaussianDyadic, p).unwrap());
        assert!(r.residual_mass < 1e-10 && r.residual_tilt < 1e-10, "p = {p}: {r:?}");
    }
}

#[test]
fn srw_small_cases_by_enumeration() {
    // Paths ++ and +- stay at or above 0.
    assert_eq!(min_survival_exact(&StepDistribution::srw(), 0.0, 2).unwrap(), 0.5);
    let mut l = LatticeLadder::new(&StepDistribution::srw()).unwrap();
    for k in 0..=30 {
        assert_eq!(l.r_minus(k as f64 + 0.25), k as f64 + 1.0);
        assert!((l.k_atom(k as f64) - 1.0).abs() < 1e-12);
    }
    assert!((l.theta0 - 2.0).abs() < 1e-6);
}

#[test]
fn ladder_and_path_dp_agree_on_asymmetric_walk() {
    let d = StepDistribution::asymmetric5();
    for u in [0.0, 1.0, 3.0, 7.0] {
        let a = renewal_minus(&d, u, RenewalMethod::ExactLatticeDp).unwrap();
        let b = renewal_minus(&d, u, RenewalMethod::PathDp).unwrap();
        assert!((a.value - b.value).abs() <= b.error_bound.max(1e-9), "u = {u}: {a:?} vs {b:?}");
    }
}

#[test]
fn extended_identity_and_zero_rejection() {
    let rows = renewal_identity_grid(&StepDistribution::asymmetric5(), &[1, 4, 8], &[1, 3]).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.residual < 1e-5), "{rows:?}");
    assert!(renewal_identity_grid(&StepDistribution::srw(), &[2], &[0]).is_err());
}

#[test]
fn many_to_one_counts_particles() {
    let spec = make_spec(Family::GaussianDyadic, 1.0).unwrap();
    let r = many_to_one_check(&spec, 3, PathFunctional::One, 40_000, &Exec::new(2), 5).unwrap();
    assert!(r.tree_side.z_distance(&r.walk_side) < 4.0, "{r:?}");
    assert!((r.walk_side.value - 8.0).abs() < 4.0 * r.walk_side.stderr + 1e-9, "{r:?}");
}

#[test]
fn ks_power_and_identity() {
    let mut rng = RngStream::named(1, "tests/ks", 0).rng();
    let a: Vec<f64> = (0..10_000).map(|_| -rng.gen::<f64>().ln()).collect();
    let b: Vec<f64> = (0..10_000).map(|_| -rng.gen::<f64>().ln() / 2.0).collect();
    assert!(ks_one_sample(&b, Reference::Exponential { rate: 1.0 }).unwrap().p_value < 1e-6);
    assert!(ks_two_sample(&a, &b).unwrap().p_value < 1e-6);
    assert_eq!(ks_two_sample(&a, &a).unwrap().statistic, 0.0);
}

#[test]
fn plateau_of_slowly_decaying_curve() {
    let xs: Vec<f64> = (0..=12).map(f64::from).collect();
    let s = vec![0.01; xs.len()];
    let v: Vec<f64> = xs.iter().map(|x| 1.0 + 1.0 / x.max(1.0)).collect();
    let f = plateau_fit(&xs, &v, &s).unwrap();
    assert!(f.relative_drift.abs() < 0.10, "{f:?}");
    let lin: Vec<f64> = xs.iter().map(|x| 1.0 + 0.2 * x).collect();
    assert!(plateau_fit(&xs, &lin, &s).unwrap().flagged);
}

#[test]
fn min_tail_at_zero_is_one() {
    let spec = make_spec(Family::GaussianDyadic, 1.0).unwrap();
    let r = estimate_min_tail(&spec, 0.0, 1000, 100, &Exec::new(1), 1).unwrap();
    assert_eq!(r.p_hat, 1.0);
}

#[test]
fn reversed_forward_and_direct_estimators_agree() {
    let spec = make_spec(Family::GaussianDyadic, 1.0).unwrap();
    let exec = Exec::new(2);
    let rev = estimate_min_tail(&spec, 2.0, 1_000_000, 40_000, &exec, 11).unwrap();
    let direct = direct_min_tail(&spec, &[2.0], 6.0, rev.closure, 20_000, &exec, 12).unwrap();
    let fwd = forward_min_tail(&spec, &[2.0], &ForwardConfig::default(), 40_000, &exec, 13).unwrap();
    let z = |a: f64, sa: f64, b: f64, sb: f64| (a - b).abs() / sa.hypot(sb);
    assert!(z(rev.exm_phat, rev.exm_stderr, direct[0].value, direct[0].stderr) < 4.0, "{rev:?} {direct:?}");
    assert!(z(rev.exm_phat, rev.exm_stderr, fwd.values[0].value, fwd.values[0].stderr) < 4.0, "{rev:?} {fwd:?}");
    assert!(rev.exm_phat > 0.0 && rev.exm_phat <= 1.0);
}

#[test]
fn plain_trees_bracket_the_minimum_tail() {
    // e^x P(M_12 < -x) <= 1 for the minimum over the first 12 generations.
    let spec = make_spec(Family::GaussianDyadic, 1.0).unwrap();
    let n = 4000;
    let mut hits = [0u32; 3];
    for i in 0..n {
        let mut rng = RngStream::named(2, "tests/bracket", i).rng();
        let t = simulate_tree(&spec, 12, BarrierPolicy::None, usize::MAX, &mut rng).unwrap();
        let m = global_min(&t, &mut rng).value;
        for (h, x) in hits.iter_mut().zip([1.0, 2.0, 3.0]) {
            *h += u32::from(m < -x);
        }
    }
    for (h, x) in hits.iter().zip([1.0f64, 2.0, 3.0]) {
        let p = *h as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!(p * x.exp() <= 1.0 + 3.0 * se * x.exp(), "x = {x}: {p}");
    }
}
