//! Closed forms and quadrature oracles for planar geometries.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::media::PhysicalConstants;
use crate::quadrature::{integrate, integrate_to_inf, QuadOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Quadrature,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyResult {
    pub value: f64,
    pub method: Method,
    /// Estimated absolute error (0 for closed forms).
    pub error: f64,
}

impl EfficiencyResult {
    fn closed(value: f64) -> Self {
        Self {
            value,
            method: Method::ClosedForm,
            error: 0.0,
        }
    }
}

const SERIES_BELOW: f64 = 1e-3;

fn check_chi(chi: f64) -> Result<()> {
    if chi.is_nan() || chi < 0.0 {
        return invalid(format!("susceptibility must be non-negative, got {chi}"));
    }
    Ok(())
}

/// Vacuum-side efficiency relative to the perfect-conductor CP potential.
pub fn eta_te(chi: f64) -> Result<EfficiencyResult> {
    check_chi(chi)?;
    let v = if chi == f64::INFINITY {
        1.0 / 6.0
    } else if chi < SERIES_BELOW {
        chi * (1.0 / 40.0
            + chi * (-1.0 / 112.0
                + chi * (5.0 / 1152.0
                    + chi * (-7.0 / 2816.0 + chi * (21.0 / 13312.0 - chi * 11.0 / 10240.0)))))
    } else {
        let s = chi.sqrt();
        1.0 / 6.0 + 1.0 / chi - (1.0 + chi).sqrt() / (2.0 * chi) - s.asinh() / (2.0 * chi * s)
    };
    Ok(EfficiencyResult::closed(v))
}

/// Embedded-atom efficiency; positive for every chi > 0.
pub fn eta_te_prime(chi: f64) -> Result<EfficiencyResult> {
    check_chi(chi)?;
    let v = if chi == f64::INFINITY {
        0.0
    } else if chi < SERIES_BELOW {
        chi * (1.0 / 40.0
            + chi * (-3.0 / 56.0
                + chi * (95.0 / 1152.0
                    + chi * (-39.0 / 352.0
                        + chi * (1841.0 / 13312.0 - chi * 2533.0 / 15360.0)))))
    } else {
        let s = chi.sqrt();
        let op = 1.0 + chi;
        (5.0 / 6.0 + 1.0 / chi - op.sqrt() / (2.0 * chi) - op * op.sqrt() / (2.0 * chi * s) * s.atan())
            / (op * op.sqrt())
    };
    Ok(EfficiencyResult::closed(v))
}

fn nested(
    outer: impl Fn(f64) -> Result<f64>,
    what: &str,
) -> Result<EfficiencyResult> {
    let mut failure = None;
    let q = integrate_to_inf(
        |q| match outer(q) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        0.0,
        QuadOptions::rel(1e-11),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let value = q.require(what)?;
    Ok(EfficiencyResult {
        value,
        method: Method::Quadrature,
        error: q.error,
    })
}

/// eta_TE from the (s, lambda) integral, with lambda + s = q^2 and s = sigma^2.
pub fn eta_te_quadrature(chi: f64) -> Result<EfficiencyResult> {
    check_chi(chi)?;
    if chi == 0.0 {
        return Ok(EfficiencyResult {
            value: 0.0,
            method: Method::Quadrature,
            error: 0.0,
        });
    }
    let r = move |a: f64, q: f64| {
        if chi == f64::INFINITY {
            1.0
        } else {
            let b = (q * q + a * chi).sqrt() + q;
            a * chi / (b * b)
        }
    };
    nested(
        |q| {
            if q == 0.0 {
                return Ok(0.0);
            }
            let inner = integrate(
                |sg| {
                    let a = sg * sg;
                    a * r(a, q)
                },
                0.0,
                q,
                QuadOptions::rel(1e-13),
            )
            .require("eta_te inner integral")?;
            Ok(16.0 / 3.0 * (-2.0 * SQRT_2 * q).exp() * inner)
        },
        "eta_te quadrature",
    )
}

/// eta'_TE from the embedded-atom (s, lambda) integral, lambda + s(1 + chi) = q^2.
pub fn eta_te_prime_quadrature(chi: f64) -> Result<EfficiencyResult> {
    check_chi(chi)?;
    if chi == 0.0 || chi == f64::INFINITY {
        return Ok(EfficiencyResult {
            value: 0.0,
            method: Method::Quadrature,
            error: 0.0,
        });
    }
    nested(
        |q| {
            if q == 0.0 {
                return Ok(0.0);
            }
            let upper = q / (1.0 + chi).sqrt();
            let inner = integrate(
                |sg| {
                    let a = sg * sg * chi;
                    let b = q + (q * q - a).max(0.0).sqrt();
                    sg * sg * a / (b * b)
                },
                0.0,
                upper,
                QuadOptions::rel(1e-13),
            )
            .require("eta_te_prime inner integral")?;
            Ok(16.0 / 3.0 * (-2.0 * SQRT_2 * q).exp() * inner)
        },
        "eta_te_prime quadrature",
    )
}

/// TE Fresnel factor -chi/(p + sqrt(p^2 + chi))^2, -1 in the Dirichlet limit.
#[inline]
pub fn fresnel_p(p: f64, chi: f64) -> f64 {
    if chi == f64::INFINITY {
        -1.0
    } else {
        let b = p + (p * p + chi).sqrt();
        -chi / (b * b)
    }
}

/// (sqrt(lambda) - sqrt(lambda + chi)) / (sqrt(lambda) + sqrt(lambda + chi)).
#[inline]
pub fn reflection(lambda: f64, chi: f64) -> f64 {
    fresnel_p(lambda.sqrt(), chi)
}

/// Casimir efficiency relative to the perfect-conductor energy density.
pub fn gamma_te(chi1: f64, chi2: f64) -> Result<EfficiencyResult> {
    check_chi(chi1)?;
    check_chi(chi2)?;
    if chi1 == 0.0 || chi2 == 0.0 {
        return Ok(EfficiencyResult {
            value: 0.0,
            method: Method::Quadrature,
            error: 0.0,
        });
    }
    let mut failure: Option<Error> = None;
    let outer = integrate_to_inf(
        |pm1| {
            let p = 1.0 + pm1;
            let rr = fresnel_p(p, chi1) * fresnel_p(p, chi2);
            let inner = integrate_to_inf(
                |xi| xi * xi * (-rr * (-2.0 * p * xi).exp()).ln_1p(),
                0.0,
                QuadOptions::rel(1e-13),
            );
            match inner.require("gamma_te inner integral") {
                Ok(v) => p * v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        QuadOptions::rel(1e-11),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let v = outer.require("gamma_te quadrature")?;
    let scale = 180.0 / PI.powi(4);
    Ok(EfficiencyResult {
        value: -scale * v,
        method: Method::Quadrature,
        error: scale * outer.error,
    })
}

/// f(0) for f'' = 2[lambda + chi Theta(x - d)] f - 2 delta(x).
pub fn fk_one_step_raw(lambda: f64, chi: f64, d: f64) -> f64 {
    let r = reflection(lambda, chi);
    if d >= 0.0 {
        let k = (2.0 * lambda).sqrt();
        (1.0 + r * (-2.0 * k * d).exp()) / k
    } else {
        if chi == f64::INFINITY {
            return 0.0;
        }
        let k = (2.0 * (lambda + chi)).sqrt();
        (1.0 - r * (2.0 * k * d).exp()) / k
    }
}

/// One-interface Feynman-Kac solution with the potential s (1 + chi Theta(x - d)),
/// i.e. lambda -> lambda + s and chi -> s chi.
pub fn fk_one_step(lambda: f64, s_strength: f64, chi: f64, d: f64) -> Result<f64> {
    if !(lambda > 0.0) || s_strength < 0.0 {
        return invalid("fk_one_step needs lambda > 0 and s >= 0");
    }
    check_chi(chi)?;
    let chi_eff = if s_strength == 0.0 { 0.0 } else { s_strength * chi };
    Ok(fk_one_step_raw(lambda + s_strength, chi_eff, d))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// Source inside body 1 (0 < d1 < d2).
    I,
    /// Source in the gap (d1 < 0 < d2).
    II,
    /// Source inside body 2 (d1 < d2 < 0).
    III,
}

/// Two-interface solution for the potential chi1 Theta(d1 - x) + chi2 Theta(x - d2).
pub fn fk_two_step(lambda: f64, chi1: f64, chi2: f64, d1: f64, d2: f64, region: Region) -> Result<f64> {
    if !(lambda > 0.0) {
        return invalid("lambda must be positive");
    }
    check_chi(chi1)?;
    check_chi(chi2)?;
    if !(d2 > d1) {
        return invalid("need d2 > d1");
    }
    let ok = match region {
        Region::I => 0.0 < d1,
        Region::II => d1 < 0.0 && 0.0 < d2,
        Region::III => d2 < 0.0,
    };
    if !ok {
        return invalid(format!("region {region:?} inconsistent with d1 = {d1}, d2 = {d2}"));
    }
    let k = (2.0 * lambda).sqrt();
    let d = d2 - d1;
    let r1 = reflection(lambda, chi1);
    let r2 = reflection(lambda, chi2);
    let e = (-2.0 * k * d).exp();
    let delta = 1.0 - r1 * r2 * e;
    Ok(match region {
        Region::I => {
            if chi1 == f64::INFINITY {
                return Ok(0.0);
            }
            let k1 = (2.0 * (lambda + chi1)).sqrt();
            (1.0 + (r2 * e - r1) / delta * (-2.0 * k1 * d1).exp()) / k1
        }
        Region::II => {
            (1.0 + 2.0 * r1 * r2 * e / delta
                + (r1 * (2.0 * k * d1).exp() + r2 * (-2.0 * k * d2).exp()) / delta)
                / k
        }
        Region::III => {
            if chi2 == f64::INFINITY {
                return Ok(0.0);
            }
            let k2 = (2.0 * (lambda + chi2)).sqrt();
            (1.0 + (r1 * e - r2) / delta * (2.0 * k2 * d2).exp()) / k2
        }
    })
}

fn inv4(l: f64, x: f64) -> f64 {
    if x == f64::INFINITY {
        0.0
    } else {
        0.25 / (l + x)
    }
}

/// One-body integral I = (1/(4L) - 1/(4(L + X))) r at L = lambda + s, X = s chi.
pub fn fk_one_body_integral(lambda: f64, s: f64, chi: f64) -> f64 {
    let l = lambda + s;
    let x = if chi == 0.0 { 0.0 } else { s * chi };
    (0.25 / l - inv4(l, x)) * reflection(l, x)
}

/// Two-body integral I12 at L = lambda + s, X_i = s chi_i.
pub fn fk_two_body_integral(lambda: f64, s: f64, chi1: f64, chi2: f64, d: f64) -> f64 {
    let l = lambda + s;
    let (x1, x2) = (s * chi1, s * chi2);
    let k = (2.0 * l).sqrt();
    let r1 = reflection(l, x1);
    let r2 = reflection(l, x2);
    let e = (-2.0 * k * d).exp();
    let delta = 1.0 - r1 * r2 * e;
    2.0 * r1 * r2 * e * d / (k * delta)
        + (r1 + r2) * (1.0 - e) / (4.0 * l * delta)
        + (r2 * e - r1) * inv4(l, x1) / delta
        + (r1 * e - r2) * inv4(l, x2) / delta
}

/// I12 - I1 - I2 written without the large cancelling terms.
pub fn fk_interaction_integral(lambda: f64, s: f64, chi1: f64, chi2: f64, d: f64) -> f64 {
    let l = lambda + s;
    let (x1, x2) = (s * chi1, s * chi2);
    let k = (2.0 * l).sqrt();
    let r1 = reflection(l, x1);
    let r2 = reflection(l, x2);
    let e = (-2.0 * k * d).exp();
    let delta = 1.0 - r1 * r2 * e;
    e / delta
        * (2.0 * r1 * r2 * d / k - (r1 + r2) * (1.0 - r1 * r2) / (4.0 * l)
            + r2 * (1.0 - r1 * r1) * inv4(l, x1)
            + r1 * (1.0 - r2 * r2) * inv4(l, x2))
}

/// TE Casimir energy per area from the Feynman-Kac (lambda, s) integral,
/// -(sqrt 2/(8 pi^2)) int dlambda lambda int ds s^-1/2 (I12 - I1 - I2).
/// With lambda + s = q^2 and s = q^2 w^2 the inner range is w in [0, 1].
pub fn casimir_density_quadrature(chi1: f64, chi2: f64, d: f64) -> Result<f64> {
    check_chi(chi1)?;
    check_chi(chi2)?;
    if !(d > 0.0) {
        return invalid("separation must be positive");
    }
    if chi1 == 0.0 || chi2 == 0.0 {
        return Ok(0.0);
    }
    let mut failure: Option<Error> = None;
    let outer = integrate_to_inf(
        |q| {
            if q == 0.0 {
                return 0.0;
            }
            let l = q * q;
            let inner = integrate(
                |w| {
                    let s = l * w * w;
                    2.0 * (1.0 - w * w) * fk_interaction_integral(l - s, s, chi1, chi2, d)
                },
                0.0,
                1.0,
                QuadOptions::rel(1e-13).with_abs(1e-300),
            );
            match inner.require("casimir density inner integral") {
                Ok(v) => 2.0 * l * l * v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        QuadOptions::rel(1e-11),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(-SQRT_2 / (8.0 * PI * PI) * outer.require("casimir density quadrature")?)
}

/// -hbar c alpha0 / (64 pi^2 eps0 d^4).
pub fn vcp_perfect_conductor(d: f64, k: &PhysicalConstants) -> Result<f64> {
    if k.dim != 4 {
        return Err(Error::Unsupported(format!("perfect-conductor potential needs D = 4, got {}", k.dim)));
    }
    if !(d > 0.0) {
        return invalid("distance must be positive");
    }
    Ok(-k.hbar * k.c * k.alpha0 / (64.0 * PI * PI * k.eps0 * d.powi(4)))
}

/// 3 hbar c alpha0 / (32 pi^2 eps0 d^4), the electromagnetic perfect-conductor magnitude.
pub fn cp_reference(d: f64, k: &PhysicalConstants) -> f64 {
    3.0 * k.hbar * k.c * k.alpha0 / (32.0 * PI * PI * k.eps0 * d.powi(4))
}

/// hbar c pi^2 / (720 d^3).
pub fn casimir_reference(d: f64, k: &PhysicalConstants) -> f64 {
    k.hbar * k.c * PI * PI / (720.0 * d.powi(3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::li4;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn eta_reference_values() {
        assert!((eta_te(1.0).unwrap().value - 0.018_873_091_970_347_629).abs() < 1e-15);
        assert!((eta_te_prime(1.0).unwrap().value - 0.005_482_134_388_944_409).abs() < 1e-15);
        assert_eq!(eta_te(f64::INFINITY).unwrap().value, 1.0 / 6.0);
        assert!(eta_te(-1.0).is_err());
    }

    #[test]
    fn series_joins_closed_form() {
        for &(f, chi) in &[(eta_te as fn(f64) -> Result<EfficiencyResult>, 1e-3), (eta_te_prime, 1e-3)] {
            let below = f(chi * (1.0 - 1e-12)).unwrap().value;
            let above = f(chi).unwrap().value;
            assert!(rel(below, above) < 1e-8);
        }
    }

    #[test]
    fn eta_quadrature_agrees() {
        for &chi in &[0.1, 1.0, 10.0, 1e3] {
            let a = eta_te(chi).unwrap().value;
            let b = eta_te_quadrature(chi).unwrap().value;
            assert!(rel(a, b) < 1e-8, "chi={chi} {a} {b}");
            let a = eta_te_prime(chi).unwrap().value;
            let b = eta_te_prime_quadrature(chi).unwrap().value;
            assert!(rel(a, b) < 1e-8, "chi={chi} {a} {b}");
        }
    }

    #[test]
    fn gamma_matches_li4_form() {
        for &(c1, c2) in &[(1.0, 1.0), (0.1, 10.0), (f64::INFINITY, f64::INFINITY)] {
            let g = gamma_te(c1, c2).unwrap().value;
            let q = integrate_to_inf(
                |pm1| {
                    let p = 1.0 + pm1;
                    li4(fresnel_p(p, c1) * fresnel_p(p, c2)) / (p * p)
                },
                0.0,
                QuadOptions::rel(1e-13),
            );
            let alt = 45.0 / PI.powi(4) * q.value;
            assert!(rel(g, alt) < 1e-9, "{c1} {c2}: {g} {alt}");
        }
        assert!((gamma_te(1.0, 1.0).unwrap().value - 0.003_313_854_420_346_988).abs() < 1e-12);
    }

    #[test]
    fn interaction_integral_stable_form() {
        for &(l, s, c1, c2, d) in &[(1.0, 1.0, 1.0, 1.0, 1.0), (0.3, 2.0, 5.0, 0.2, 0.4), (2.0, 0.5, 10.0, 10.0, 2.0)] {
            let direct = fk_two_body_integral(l, s, c1, c2, d)
                - fk_one_body_integral(l, s, c1)
                - fk_one_body_integral(l, s, c2);
            let stable = fk_interaction_integral(l, s, c1, c2, d);
            assert!((direct - stable).abs() < 1e-13 * direct.abs().max(1e-3), "{direct} {stable}");
        }
    }
}
