use worldline::analytic::{fk_one_step, fk_one_step_raw, fk_two_step, Region};
use worldline::engine::fk_path_average;

fn check(exact: f64, lambda: f64, below: (f64, f64), above: (f64, f64), seed: u64) {
    let a = fk_path_average(lambda, below, above, 128, 100_000, seed, 1).unwrap();
    let err = (a.mean - exact).abs();
    assert!(err <= 4.0 * a.std_error() + 1e-14, "mc {} exact {exact} se {}", a.mean, a.std_error());
}

#[test]
fn free_kernel() {
    check(1.0 / 2f64.sqrt(), 1.0, (0.0, 0.0), (0.0, 0.0), 1);
}

#[test]
fn one_step_both_sides() {
    check(fk_one_step(1.0, 1.0, 1.0, 0.5).unwrap(), 2.0, (0.0, 0.0), (1.0, 0.5), 2);
    check(fk_one_step_raw(1.0, 2.0, -0.3), 1.0, (0.0, 0.0), (2.0, -0.3), 3);
}

#[test]
fn two_step_regions() {
    check(fk_two_step(1.0, 1.0, 1.0, -0.5, 0.5, Region::II).unwrap(), 1.0, (1.0, -0.5), (1.0, 0.5), 4);
    check(fk_two_step(0.5, 2.0, 1.0, 0.2, 0.9, Region::I).unwrap(), 0.5, (2.0, 0.2), (1.0, 0.9), 5);
    check(fk_two_step(1.0, 1.0, 3.0, -1.0, -0.2, Region::III).unwrap(), 1.0, (1.0, -1.0), (3.0, -0.2), 6);
}

#[test]
fn two_step_reduces_to_one_step() {
    for (d1, d2) in [(-0.5, 0.5), (-0.1, 2.0)] {
        let two = fk_two_step(1.3, 0.0, 2.0, d1, d2, Region::II).unwrap();
        let one = fk_one_step_raw(1.3, 2.0, d2);
        assert!((two - one).abs() < 1e-12);
    }
    for r in [Region::I, Region::II, Region::III] {
        let (d1, d2) = match r {
            Region::I => (0.1, 0.4),
            Region::II => (-0.2, 0.3),
            Region::III => (-0.9, -0.1),
        };
        assert!((fk_two_step(2.0, 0.0, 0.0, d1, d2, r).unwrap() - 0.5).abs() < 1e-14);
    }
    assert!(fk_two_step(1.0, 1.0, 1.0, 0.1, 0.5, Region::II).is_err());
}

#[test]
fn path_average_rejects_bad_input() {
    assert!(fk_path_average(0.0, (0.0, 0.0), (1.0, 0.0), 8, 10, 1, 1).is_err());
    assert!(fk_path_average(1.0, (0.0, 0.0), (1.0, 0.0), 0, 10, 1, 1).is_err());
}
