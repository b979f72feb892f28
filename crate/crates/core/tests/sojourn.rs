use std::f64::consts::PI;

use proptest::prelude::*;
use worldline::quadrature::{integrate_breaks, QuadOptions};
use worldline::sojourn::{
    build_tables, crossing_probability, density, mean, mgf, sample_sojourn, GridSpec, SojournParams,
};
use worldline::special::erfc;

fn p(a: f64, c: f64, t: f64, d: f64) -> SojournParams {
    SojournParams::new(a, c, t, d).unwrap()
}

fn grid() -> Vec<SojournParams> {
    vec![
        p(0.1, -0.3, 1.0, 0.5),
        p(-0.4, 0.6, 2.0, 0.1),
        p(0.6, -0.4, 1.0, 0.1),
        p(1.0, 0.7, 0.5, 0.2),
        p(0.5, 0.0, 1.0, 0.5),
        p(0.0, 0.5, 1.0, 0.5),
        p(0.0, 0.0, 1.0, 0.0),
        p(-6.0, 6.0, 1.0, 0.3),
        p(9.0, -9.0, 1.0, -0.2),
        p(0.0, 0.0, 1.0, 5.0),
        p(0.0, 0.0, 3.0, -0.1),
        p(2.0, 2.5, 0.01, 2.2),
    ]
}

#[test]
fn rejects_nonpositive_time() {
    assert!(SojournParams::new(0.0, 0.0, 0.0, 1.0).is_err());
    assert!(SojournParams::new(0.0, 0.0, -1.0, 1.0).is_err());
}

#[test]
fn normalization() {
    for q in grid() {
        let d = density(q).unwrap();
        assert!((0.0..=1.0).contains(&d.atom_at_zero) && (0.0..=1.0).contains(&d.atom_at_t));
        let total = d.atom_at_zero + d.atom_at_t + d.continuous_mass().unwrap();
        assert!((total - 1.0).abs() < 1e-6, "{q:?}: {total}");
    }
}

#[test]
fn unreachable_and_submerged_limits() {
    let far = density(p(0.0, 0.0, 1.0, 40.0)).unwrap();
    assert_eq!(far.atom_at_zero, 1.0);
    assert_eq!(far.continuous_mass().unwrap(), 0.0);
    let deep = density(p(0.0, 0.0, 1.0, -40.0)).unwrap();
    assert_eq!(deep.atom_at_t, 1.0);
    for s in [0.0, 1.0, 10.0] {
        assert!((mgf(p(0.0, 0.0, 1.0, 40.0), s).unwrap() - 1.0).abs() < 1e-12);
    }
    assert_eq!(mean(p(0.0, 0.0, 1.0, 40.0)), 0.0);
}

#[test]
fn atom_for_pinned_origin() {
    for dd in [0.1, 0.5, 1.0, 2.0] {
        let d = density(p(0.0, 0.0, 1.0, dd)).unwrap();
        assert!((d.atom_at_zero - (1.0 - (-2.0 * dd * dd).exp())).abs() < 1e-15);
        assert!((1.0 - d.atom_at_zero - crossing_probability(dd, 1.0)).abs() < 1e-15);
    }
    assert!((crossing_probability(1.0, 1.0) - 0.135_335_283_236_612_7).abs() < 1e-15);
}

#[test]
fn laplace_duality() {
    for q in grid() {
        let d = density(q).unwrap();
        for s in [0.0, 0.1, 1.0, 10.0] {
            let m = mgf(q, s).unwrap();
            let l = d.laplace(s).unwrap();
            assert!((m - l).abs() < 1e-6, "{q:?} s={s}: mgf {m} laplace {l}");
        }
    }
    let q = p(0.0, 0.0, 1.0, 1.0);
    assert!((mgf(q, 1.0).unwrap() - density(q).unwrap().laplace(1.0).unwrap()).abs() < 1e-6);
}

#[test]
fn mgf_continuous_across_seams() {
    for (a, c, d) in [(0.5, -0.2, 0.5), (-0.2, 0.5, 0.5), (0.3, 0.9, 0.3), (0.0, 0.0, 0.0)] {
        for s in [0.5, 5.0] {
            let lo = mgf(p(a, c, 1.0, d - 1e-7), s).unwrap();
            let at = mgf(p(a, c, 1.0, d), s).unwrap();
            let hi = mgf(p(a, c, 1.0, d + 1e-7), s).unwrap();
            assert!((lo - at).abs() < 1e-6 && (hi - at).abs() < 1e-6, "{a} {c} {d}: {lo} {at} {hi}");
        }
    }
}

#[test]
fn mgf_at_level_is_uniform_law() {
    for s in [0.1, 1.0, 7.0] {
        let m = mgf(p(0.2, 0.2, 1.0, 0.2), s).unwrap();
        assert!((m - (1.0 - (-s).exp()) / s).abs() < 1e-10);
    }
}

#[test]
fn mirror_symmetry() {
    for q in grid() {
        let d = density(q).unwrap();
        let m = density(p(-q.a, -q.c, q.t, -q.d)).unwrap();
        assert!((d.atom_at_zero - m.atom_at_t).abs() < 1e-14);
        for k in 1..10 {
            let x = q.t * k as f64 / 10.0;
            let (u, v) = (d.continuous(x), m.continuous(q.t - x));
            assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0), "{q:?} x={x}: {u} {v}");
        }
    }
}

#[test]
fn mean_matches_quadrature() {
    for q in grid() {
        let a = mean(q);
        let b = density(q).unwrap().mean_by_quadrature().unwrap();
        assert!((a - b).abs() < 1e-8 * q.t, "{q:?}: {a} {b}");
    }
    let q = p(0.0, 0.0, 1.0, 1.0);
    let expect = 0.5 * (-2.0f64).exp() - (PI / 2.0).sqrt() * erfc(2f64.sqrt());
    assert!((mean(q) - expect).abs() < 1e-14);
}

#[test]
fn mean_at_level_is_exactly_half() {
    for (x, t) in [(0.0, 1.0), (1.3, 0.2), (-4.0, 7.0)] {
        assert_eq!(mean(p(x, x, t, x)), t / 2.0);
    }
}

#[test]
fn trapezoid_identity() {
    for (dt, d) in [(1.0f64, 0.3f64), (0.25, 0.1), (2.0, 1.0), (1.0, -0.4)] {
        let gauss = |dx: f64| (-dx * dx / (2.0 * dt)).exp() / (2.0 * PI * dt).sqrt();
        let w = 12.0 * dt.sqrt();
        let bd = (2.0 * d).abs();
        let pts = [-w, -bd, 0.0, bd, w];
        let opts = QuadOptions::rel(1e-13).with_abs(1e-15);
        let trap = integrate_breaks(
            |dx| {
                let up = if dx / 2.0 > d { 1.0 } else { 0.0 };
                let dn = if -dx / 2.0 > d { 1.0 } else { 0.0 };
                gauss(dx) * dt / 2.0 * (up + dn)
            },
            &pts,
            opts,
        )
        .value;
        let exact = integrate_breaks(|dx| gauss(dx) * mean(p(-dx / 2.0, dx / 2.0, dt, d)), &pts, opts).value;
        let closed = dt / 2.0 * erfc(2f64.sqrt() * d / dt.sqrt());
        assert!((trap - closed).abs() < 1e-8, "{trap} {closed}");
        assert!((exact - closed).abs() < 1e-8, "{exact} {closed}");
    }
}

#[test]
fn sampler_matches_mean() {
    let tables = build_tables(&GridSpec::default()).unwrap();
    assert!(tables.quantile_error < 1e-3, "quantile error {}", tables.quantile_error);
    let q = p(0.0, 0.0, 1.0, 0.5);
    assert_eq!(sample_sojourn(&tables, q, 0.0).unwrap(), 0.0);
    let n = 200_000;
    let mut acc = worldline::EstimatorAccumulator::new();
    let mut rng = worldline::RngStreamSpec::new(11, 0).rng();
    for _ in 0..n {
        acc.push(sample_sojourn(&tables, q, worldline::rng::uniform(&mut rng)).unwrap());
    }
    let z = (acc.mean - mean(q)) / acc.std_error();
    assert!(z.abs() < 4.0, "z = {z}");
    assert_eq!(sample_sojourn(&tables, p(0.0, 0.0, 1.0, -40.0), 0.3).unwrap(), 1.0);
}

#[test]
fn tables_round_trip() {
    let spec = GridSpec { extent: 1.0, spacing: 0.25, quantile_nodes: 16, theta_intervals: 64, mgf_arguments: vec![0.5, 2.0] };
    let t = build_tables(&spec).unwrap();
    let mut buf = Vec::new();
    t.save(&mut buf).unwrap();
    let back = worldline::sojourn::SojournTables::load(buf.as_slice()).unwrap();
    assert_eq!(back.spec, t.spec);
    let mut bad = buf.clone();
    let k = bad.len() / 2;
    bad[k] ^= 1;
    assert!(worldline::sojourn::SojournTables::load(bad.as_slice()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn atoms_are_probabilities(a in -3.0..3.0f64, c in -3.0..3.0f64, t in 0.01..5.0f64, d in -3.0..3.0f64) {
        let q = p(a, c, t, d);
        let den = density(q).unwrap();
        prop_assert!((0.0..=1.0).contains(&den.atom_at_zero));
        prop_assert!((0.0..=1.0).contains(&den.atom_at_t));
        let m = mean(q);
        prop_assert!((0.0..=t).contains(&m));
    }

    #[test]
    fn mgf_is_monotone_in_argument(a in -2.0..2.0f64, c in -2.0..2.0f64, d in -2.0..2.0f64) {
        let q = p(a, c, 1.0, d);
        let m1 = mgf(q, 0.5).unwrap();
        let m2 = mgf(q, 2.0).unwrap();
        prop_assert!(m2 <= m1 + 1e-12 && m1 <= 1.0 + 1e-9 && m2 >= -1e-12);
    }

    #[test]
    fn mean_time_reversal(a in -2.0..2.0f64, c in -2.0..2.0f64, d in -2.0..2.0f64) {
        prop_assert!((mean(p(a, c, 1.0, d)) - mean(p(c, a, 1.0, d))).abs() < 1e-14);
    }
}
