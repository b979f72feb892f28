use worldline::analytic::{eta_te, gamma_te};
use worldline::engine::*;
use worldline::quadrature::{integrate_breaks, QuadOptions};
use worldline::*;

fn k() -> PhysicalConstants {
    PhysicalConstants::natural()
}

fn cp(chi: f64, n: usize, paths: u64, seed: u64) -> RunConfig {
    RunConfig::new(DielectricProfile::half_space(1.0, chi).unwrap(), n, paths, seed)
}

fn gap(chi: f64, n: usize, paths: u64, seed: u64) -> RunConfig {
    RunConfig::new(DielectricProfile::gap(0.0, 1.0, chi, chi).unwrap(), n, paths, seed)
}

#[test]
fn proper_time_sampler() {
    let (t, w) = sample_t(0.5, 4, 0.0);
    assert_eq!(t, 0.5);
    assert!((w - 1.0 / (2.0 * 0.25)).abs() < 1e-15);
    let (t, _) = sample_t(1.0, 4, 0.75);
    assert!((t - 2.0).abs() < 1e-14);
}

#[test]
fn source_point_sampler() {
    assert!((sample_x0(2.0, 0.125).0 + 2.0).abs() < 1e-14);
    assert!(sample_x0(2.0, 0.5).0.abs() < 1e-14);
    assert!((sample_x0(2.0, 0.875).0 - 2.0).abs() < 1e-12);
    assert!(sample_x0(2.0, 0.0).0.is_finite());
    let mass = integrate_breaks(|x| x0_density(1.5, x), &[-1e4, -1.5, 1.5, 1e4], QuadOptions::rel(1e-12)).value;
    assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    for u in [0.01, 0.3, 0.6, 0.99] {
        let (x, w) = sample_x0(1.0, u);
        assert!((w * x0_density(1.0, x) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_susceptibility_gives_zero() {
    for e in [Estimator::Trapezoid, Estimator::Interpolation] {
        let r = estimate_cp(&cp(0.0, 64, 2000, 1).with_estimator(e), &k(), CpMode::Vacuum).unwrap();
        assert_eq!(r[0].estimate, 0.0);
        let r = estimate_casimir(&gap(0.0, 64, 2000, 1).with_estimator(e), &k()).unwrap();
        assert_eq!(r[0].estimate, 0.0);
    }
}

#[test]
fn vacuum_cp_matches_oracle() {
    let r = estimate_cp(&cp(1.0, 200, 50_000, 2), &k(), CpMode::Vacuum).unwrap();
    let r = &r[0];
    assert!(r.estimate < 0.0, "attractive");
    assert!((r.oracle.unwrap() - eta_te(1.0).unwrap().value).abs() < 1e-12);
    let z = r.z_score().unwrap();
    assert!(z.abs() < 4.0, "z = {z}");
}

#[test]
fn embedded_cp_is_repulsive() {
    let r = estimate_cp(&cp(1.0, 200, 50_000, 3).with_geometry_boundary(-1.0), &k(), CpMode::Embedded).unwrap();
    assert!(r[0].estimate > 0.0);
    assert!(r[0].normalized.unwrap() > 0.0);
    assert!(r[0].z_score().unwrap().abs() < 4.0);
}

trait Boundary {
    fn with_geometry_boundary(self, b: f64) -> Self;
}

impl Boundary for RunConfig {
    fn with_geometry_boundary(mut self, b: f64) -> Self {
        if let DielectricProfile::HalfSpace { chi, .. } = self.geometry {
            self.geometry = DielectricProfile::HalfSpace { boundary: b, chi };
        }
        self
    }
}

#[test]
fn casimir_matches_oracle_and_dirichlet_is_low() {
    let r = estimate_casimir(&gap(1.0, 200, 50_000, 4), &k()).unwrap();
    assert!((r[0].oracle.unwrap() - gamma_te(1.0, 1.0).unwrap().value).abs() < 1e-12);
    assert!(r[0].z_score().unwrap().abs() < 4.0);
    let d = estimate_casimir(&gap(f64::INFINITY, 64, 20_000, 4).with_estimator(Estimator::Dirichlet), &k()).unwrap();
    let g = d[0].normalized.unwrap();
    assert!(g < 0.5 && g > 0.25, "{g}");
}

#[test]
fn dirichlet_cp_is_biased_low() {
    let cfg = cp(f64::INFINITY, 32, 20_000, 5).with_estimator(Estimator::Dirichlet);
    let r = estimate_cp(&cfg, &k(), CpMode::Vacuum).unwrap();
    let eta = r[0].normalized.unwrap();
    assert!(eta < 1.0 / 6.0 && eta > 0.08, "{eta}");
    let c = estimate_cp_dirichlet_closed(&cfg, &k()).unwrap();
    assert!((c[0].normalized.unwrap() - eta).abs() < 6.0 * r[0].normalized_std_error.unwrap());
}

#[test]
fn embedded_dirichlet_is_rejected() {
    let cfg = cp(f64::INFINITY, 32, 100, 5).with_geometry_boundary(-1.0).with_estimator(Estimator::Dirichlet);
    assert!(matches!(estimate_cp(&cfg, &k(), CpMode::Embedded), Err(Error::InvalidArgument(_))));
}

#[test]
fn chi_sweep_is_monotone_on_shared_paths() {
    let cfg = cp(1.0, 128, 5000, 6).with_chis(&[0.0, 0.1, 1.0, 10.0, 100.0, f64::INFINITY]).unwrap();
    let r = estimate_cp(&cfg, &k(), CpMode::Vacuum).unwrap();
    assert_eq!(r.len(), 6);
    assert_eq!(r[0].estimate, 0.0);
    for w in r.windows(2) {
        assert!(w[1].normalized.unwrap() > w[0].normalized.unwrap(), "{} {}", w[0].chi, w[1].chi);
    }
    assert!(r[5].normalized.unwrap() < 1.0 / 6.0 + 0.01);
}

#[test]
fn ordered_reduction_is_bit_identical_across_workers() {
    let base = cp(1.0, 64, 20_000, 7);
    let runs: Vec<f64> = [1, 4, 16]
        .iter()
        .map(|&w| {
            let c = base.clone().with_workers(w, Reduction::Ordered);
            estimate_cp(&c, &k(), CpMode::Vacuum).unwrap()[0].estimate
        })
        .collect();
    assert_eq!(runs[0].to_bits(), runs[1].to_bits());
    assert_eq!(runs[0].to_bits(), runs[2].to_bits());
    let free = estimate_cp(&base.clone().with_workers(4, Reduction::Free), &k(), CpMode::Vacuum).unwrap();
    assert!((free[0].estimate - runs[0]).abs() <= 1e-12 * runs[0].abs());
}

#[test]
fn seeds_change_the_estimate() {
    let a = estimate_cp(&cp(1.0, 64, 3000, 1), &k(), CpMode::Vacuum).unwrap();
    let b = estimate_cp(&cp(1.0, 64, 3000, 2), &k(), CpMode::Vacuum).unwrap();
    assert_ne!(a[0].estimate, b[0].estimate);
    assert_eq!(a[0].n_paths_used, 3000);
}

#[test]
fn validation_errors() {
    let bad = [
        cp(1.0, 64, 0, 1),
        cp(1.0, 0, 10, 1),
        RunConfig { dim: 3, ..cp(1.0, 8, 10, 1) },
        RunConfig { d0: Some(-1.0), ..gap(1.0, 8, 10, 1) },
    ];
    for c in &bad {
        assert!(matches!(run(c, &k()), Err(Error::InvalidArgument(_))), "{c:?}");
    }
    assert!(CpMode::from_boundary(0.0).is_err());
    assert!(DielectricProfile::gap(1.0, 0.0, 1.0, 1.0).is_err());
    assert!(Susceptibility::new(-1.0).is_err());
}

#[test]
fn config_serde() {
    let c = cp(10.0, 100, 1000, 9).with_chis(&[1.0, f64::INFINITY]).unwrap();
    let js = serde_json::to_string(&c).unwrap();
    let back: RunConfig = serde_json::from_str(&js).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), js);
    let typo = js.replacen("\"n_paths\"", "\"n_path\"", 1);
    assert!(serde_json::from_str::<RunConfig>(&typo).is_err());
    let minimal = r#"{"geometry":{"kind":"half_space","boundary":1.0,"chi":1.0},"n_steps":10,"n_paths":5}"#;
    let m: RunConfig = serde_json::from_str(minimal).unwrap();
    assert_eq!((m.dim, m.workers, m.estimator, m.reduction), (4, 1, Estimator::Trapezoid, Reduction::Ordered));
}

#[test]
fn csv_output() {
    let r = estimate_cp(&cp(1.0, 16, 500, 1).with_chis(&[1.0, 2.0]).unwrap(), &k(), CpMode::Vacuum).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &r).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "geometry,chi,N,n_paths,estimate,std_error,normalized,seed");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("half_space,1,16,500,"));
}

#[test]
fn other_dimensions_have_no_oracle() {
    let kk = PhysicalConstants { dim: 6, ..k() };
    let c = RunConfig { dim: 6, ..cp(1.0, 32, 2000, 1) };
    let r = estimate_cp(&c, &kk, CpMode::Vacuum).unwrap();
    assert!(r[0].oracle.is_none() && r[0].estimate < 0.0);
}
