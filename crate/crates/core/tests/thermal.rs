use worldline::engine::*;
use worldline::thermal::*;
use worldline::*;

fn k() -> PhysicalConstants {
    PhysicalConstants::natural()
}

fn cp(n: usize, paths: u64, seed: u64) -> RunConfig {
    RunConfig::new(DielectricProfile::half_space(1.0, 1.0).unwrap(), n, paths, seed)
}

fn gap(n: usize, paths: u64, seed: u64) -> RunConfig {
    RunConfig::new(DielectricProfile::gap(0.0, 1.0, 1.0, 1.0).unwrap(), n, paths, seed)
}

const CONST: DispersionModel = DispersionModel::Constant { chi0: 1.0 };

#[test]
fn config_validation() {
    assert!(ThermalConfig { beta: 0.0, n_max: 4, constants: k() }.validate().is_err());
    assert!(DispersionModel::Lorentz { chi0: 1.0, omega0: 0.0 }.validate().is_err());
    assert!(DispersionModel::Constant { chi0: -1.0 }.validate().is_err());
    let tc = ThermalConfig::with_default_modes(10.0, 1.0, k());
    assert!(tc.n_max >= 2);
    assert_eq!(matsubara_frequencies(&tc).len(), tc.n_max + 1);
}

#[test]
fn estimator_restrictions() {
    let c = cp(32, 100, 1).with_estimator(Estimator::MgfSegment);
    assert!(cp_zero_t(&c, &CONST, &k()).is_err());
}

#[test]
fn zero_t_cp_reproduces_engine_on_shared_paths() {
    let c = cp(100, 20_000, 2);
    let z = cp_zero_t(&c, &CONST, &k()).unwrap();
    let e = estimate_cp(&c, &k(), CpMode::Vacuum).unwrap();
    assert!((z.value - e[0].estimate).abs() <= 1e-9 * z.value.abs(), "{} {}", z.value, e[0].estimate);
}

#[test]
fn zero_t_free_energy_reproduces_engine_on_shared_paths() {
    let c = gap(100, 20_000, 3);
    let z = free_energy_zero_t(&c, &CONST, &k()).unwrap();
    let e = estimate_casimir(&c, &k()).unwrap();
    assert!((z.value - e[0].estimate).abs() <= 1e-9 * z.value.abs(), "{} {}", z.value, e[0].estimate);
}

#[test]
fn high_temperature_cp_vanishes() {
    let c = cp(100, 20_000, 4);
    let zero = cp_zero_t(&c, &CONST, &k()).unwrap();
    let hot = cp_thermal(&c, &CONST, &ThermalConfig::with_default_modes(0.1, 1.0, k())).unwrap();
    assert!(hot.value.abs() < 1e-3 * zero.value.abs());
    assert!(!hot.truncation_warning);
}

#[test]
fn low_temperature_cp_approaches_zero_t() {
    let c = cp(100, 20_000, 5);
    let zero = cp_zero_t(&c, &CONST, &k()).unwrap();
    let cold = cp_thermal(&c, &CONST, &ThermalConfig::with_default_modes(60.0, 1.0, k())).unwrap();
    let r = cold.value / zero.value;
    assert!((r - 1.0).abs() < 0.01, "{r}");
    assert_eq!(cold.modes.len(), ThermalConfig::with_default_modes(60.0, 1.0, k()).n_max + 1);
    assert!((cold.modes.iter().sum::<f64>() - cold.value).abs() < 1e-9 * cold.value.abs());
}

#[test]
fn low_temperature_free_energy_approaches_zero_t() {
    let c = gap(100, 20_000, 6);
    let zero = free_energy_zero_t(&c, &CONST, &k()).unwrap();
    let cold = free_energy_thermal(&c, &CONST, &ThermalConfig::with_default_modes(50.0, 1.0, k())).unwrap();
    let r = cold.value / zero.value;
    assert!((r - 1.0).abs() < 0.01, "{r}");
}

#[test]
fn stiff_lorentz_medium_matches_constant() {
    let c = gap(100, 10_000, 7);
    let a = free_energy_zero_t(&c, &CONST, &k()).unwrap();
    let b = free_energy_zero_t(&c, &DispersionModel::Lorentz { chi0: 1.0, omega0: 1e4 }, &k()).unwrap();
    assert!((a.value - b.value).abs() < 1e-3 * a.value.abs());
    let soft = free_energy_zero_t(&c, &DispersionModel::Lorentz { chi0: 1.0, omega0: 0.5 }, &k()).unwrap();
    assert!(soft.value.abs() < a.value.abs());
}

#[test]
fn truncated_sum_warns() {
    let c = cp(50, 2000, 8);
    let tc = ThermalConfig { beta: 60.0, n_max: 2, constants: k() };
    let r = cp_thermal(&c, &CONST, &tc).unwrap();
    assert!(r.truncation_warning && r.truncation_bound > 0.0);
}
