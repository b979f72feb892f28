use proptest::prelude::*;
use worldline::analytic::{eta_te, fk_two_step, reflection, Region};
use worldline::engine::{interp_frac_above, interp_frac_below, sample_t, sample_x0, trap_frac_above, x0_density};
use worldline::media::{frac_above, frac_below};
use worldline::stats::{loglog_slope, weighted_loglog_slope};
use worldline::{BridgeEnsemble, EstimatorAccumulator};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn accs(xs: &[f64], cut1: usize, cut2: usize) -> [EstimatorAccumulator; 3] {
    let (a, rest) = xs.split_at(cut1.min(xs.len()));
    let (b, c) = rest.split_at(cut2.min(rest.len()));
    [EstimatorAccumulator::from_slice(a), EstimatorAccumulator::from_slice(b), EstimatorAccumulator::from_slice(c)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_is_associative_and_matches_single_pass(
        xs in prop::collection::vec(-1e3..1e3f64, 0..80), c1 in 0usize..80, c2 in 0usize..80,
    ) {
        let [a, b, c] = accs(&xs, c1, c2);
        let left = a.merge(&b).merge(&c);
        let right = a.merge(&b.merge(&c));
        let whole = EstimatorAccumulator::from_slice(&xs);
        prop_assert_eq!(left.count, whole.count);
        prop_assert!(close(left.mean, right.mean, 1e-12) && close(left.mean, whole.mean, 1e-12));
        prop_assert!(close(left.m2, right.m2, 1e-9) && close(left.m2, whole.m2, 1e-9));
    }

    #[test]
    fn merge_with_empty_is_identity(xs in prop::collection::vec(-10.0..10.0f64, 0..20)) {
        let a = EstimatorAccumulator::from_slice(&xs);
        prop_assert_eq!(a.merge(&EstimatorAccumulator::new()), a);
        prop_assert_eq!(EstimatorAccumulator::new().merge(&a), a);
    }

    #[test]
    fn source_sampler_inverts_its_density(d0 in 0.01..100.0f64, u in 1e-9..1.0f64) {
        let (x, w) = sample_x0(d0, u);
        prop_assert!(x.is_finite() && w > 0.0);
        prop_assert!(close(w * x0_density(d0, x), 1.0, 1e-12));
        let (x2, _) = sample_x0(d0, (u + 0.01).min(1.0 - 1e-12));
        prop_assert!(x2 >= x);
    }

    #[test]
    fn proper_time_never_below_cutoff(t0 in 1e-6..1e3f64, u in 0.0..1.0f64, dim in 2u32..8) {
        let (t, w) = sample_t(t0, dim, u);
        prop_assert!(t >= t0 && w > 0.0);
    }

    #[test]
    fn segment_fractions_partition(a in -3.0..3.0f64, b in -3.0..3.0f64, d in -3.0..3.0f64) {
        let up = frac_above(a, b, d);
        let dn = frac_below(a, b, d);
        prop_assert!((0.0..=1.0).contains(&up) && (0.0..=1.0).contains(&dn));
        prop_assert!((up + dn - 1.0).abs() < 1e-12);
    }

    #[test]
    fn path_fractions_are_bounded_and_monotone(seed in 0u64..1000, l in -1.0..1.0f64, n in 2usize..64) {
        let e = BridgeEnsemble::generate(n, 1, 1, seed).unwrap();
        let b = e.bridges[0].axis(0);
        let f = interp_frac_above(b, l);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!(interp_frac_above(b, l + 0.1) <= f + 1e-12);
        prop_assert!((f + interp_frac_below(b, l) - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&trap_frac_above(b, l)));
    }

    #[test]
    fn reflection_is_bounded(lambda in 1e-3..1e3f64, chi in 0.0..1e4f64) {
        let r = reflection(lambda, chi);
        prop_assert!((-1.0..=0.0).contains(&r));
    }

    #[test]
    fn eta_is_bounded_and_increasing(chi in 1e-3..1e3f64) {
        let a = eta_te(chi).unwrap().value;
        let b = eta_te(chi * 1.5).unwrap().value;
        prop_assert!(a > 0.0 && a < 1.0 / 6.0 && b > a);
    }

    #[test]
    fn two_step_is_below_free_kernel(
        lambda in 0.1..5.0f64, c1 in 0.0..5.0f64, c2 in 0.0..5.0f64, d1 in -2.0..-0.01f64, d2 in 0.01..2.0f64,
    ) {
        let f = fk_two_step(lambda, c1, c2, d1, d2, Region::II).unwrap();
        prop_assert!(f > 0.0 && f <= 1.0 / (2.0 * lambda).sqrt() + 1e-12);
    }
}

#[test]
fn weighted_slope_recovers_power_law() {
    let xs = [32.0, 64.0, 128.0, 256.0, 512.0];
    let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-1.5)).collect();
    let sig: Vec<f64> = ys.iter().map(|y| 0.01 * y).collect();
    assert!((weighted_loglog_slope(&xs, &ys, &sig) + 1.5).abs() < 1e-12);
    assert!((loglog_slope(&xs, &ys) + 1.5).abs() < 1e-12);
    let mut noisy = ys.clone();
    noisy[4] *= 5.0;
    let mut wide = sig.clone();
    wide[4] = 1e3 * noisy[4];
    assert!((weighted_loglog_slope(&xs, &noisy, &wide) + 1.5).abs() < 1e-3);
}
