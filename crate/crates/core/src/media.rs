//! Dielectric profiles, path averages and renormalized integrands.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bridges::{min_max, scale_shift, ScaledPath, StandardBridge};
use crate::error::{invalid, Error, Result};

/// Susceptibility of a body; `Dirichlet` is the chi -> infinity limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Susceptibility {
    Finite(f64),
    Dirichlet,
}

impl Susceptibility {
    pub fn new(chi: f64) -> Result<Self> {
        if chi == f64::INFINITY {
            Ok(Self::Dirichlet)
        } else if chi.is_finite() && chi >= 0.0 {
            Ok(Self::Finite(chi))
        } else {
            invalid(format!("susceptibility must be >= 0 or inf, got {chi}"))
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Finite(c) if *c == 0.0)
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self, Self::Dirichlet)
    }

    /// The value as a float, infinity for the Dirichlet marker.
    pub fn as_f64(&self) -> f64 {
        match self {
            Self::Finite(c) => *c,
            Self::Dirichlet => f64::INFINITY,
        }
    }
}

impl fmt::Display for Susceptibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(c) => write!(f, "{c}"),
            Self::Dirichlet => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Susceptibility {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if matches!(t.as_str(), "inf" | "infinity" | "+inf" | "dirichlet") {
            return Ok(Self::Dirichlet);
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad susceptibility '{s}'")))?;
        Self::new(v)
    }
}

impl Serialize for Susceptibility {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Finite(c) => s.serialize_f64(*c),
            Self::Dirichlet => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Susceptibility {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Susceptibility::new(v).map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// (1 + sum chi_i f_i)^(-p), saturating to 0 when a Dirichlet body has
/// positive weight.
#[inline]
pub fn inv_pow(terms: &[(Susceptibility, f64)], p: f64) -> f64 {
    let mut eps = 1.0;
    for &(chi, f) in terms {
        match chi {
            Susceptibility::Finite(c) => eps += c * f,
            Susceptibility::Dirichlet => {
                if f > 0.0 {
                    return 0.0;
                }
            }
        }
    }
    if p == 1.5 {
        1.0 / (eps * eps.sqrt())
    } else if p == 0.5 {
        1.0 / eps.sqrt()
    } else {
        eps.powf(-p)
    }
}

type FieldFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type LineFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// Arbitrary permittivity field with an optional straight-line average.
#[derive(Clone)]
pub struct UserField {
    pub eps: Arc<FieldFn>,
    pub line_average: Option<Arc<LineFn>>,
}

impl fmt::Debug for UserField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserField")
            .field("line_average", &self.line_average.is_some())
            .finish()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DielectricProfile {
    Vacuum,
    HalfSpace {
        boundary: f64,
        chi: Susceptibility,
    },
    Gap {
        d1: f64,
        d2: f64,
        chi1: Susceptibility,
        chi2: Susceptibility,
    },
    #[serde(skip)]
    UserField(UserField),
}

impl DielectricProfile {
    pub fn half_space(boundary: f64, chi: f64) -> Result<Self> {
        Ok(Self::HalfSpace {
            boundary,
            chi: Susceptibility::new(chi)?,
        })
    }

    pub fn gap(d1: f64, d2: f64, chi1: f64, chi2: f64) -> Result<Self> {
        let p = Self::Gap {
            d1,
            d2,
            chi1: Susceptibility::new(chi1)?,
            chi2: Susceptibility::new(chi2)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Gap { d1, d2, .. } if !(d2 > d1) => invalid("gap requires d2 > d1"),
            Self::HalfSpace { boundary, .. } if !boundary.is_finite() => {
                invalid("half-space boundary must be finite")
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Vacuum => "vacuum",
            Self::HalfSpace { .. } => "half_space",
            Self::Gap { .. } => "gap",
            Self::UserField(_) => "user_field",
        }
    }

    /// The one-body profiles of a gap: (body 1 alone, body 2 alone).
    pub fn one_body_parts(&self) -> Option<(Self, Self)> {
        match *self {
            Self::Gap {
                d1,
                d2,
                chi1,
                chi2,
            } => Some((
                Self::Gap {
                    d1,
                    d2,
                    chi1,
                    chi2: Susceptibility::Finite(0.0),
                },
                Self::Gap {
                    d1,
                    d2,
                    chi1: Susceptibility::Finite(0.0),
                    chi2,
                },
            )),
            _ => None,
        }
    }

    /// Susceptibility weights (chi, indicator) contributing at normal coordinate z.
    fn planar_terms(&self, z: f64) -> [(Susceptibility, f64); 2] {
        let zero = (Susceptibility::Finite(0.0), 0.0);
        match *self {
            Self::HalfSpace { boundary, chi } => [(chi, ind(z >= boundary)), zero],
            Self::Gap {
                d1,
                d2,
                chi1,
                chi2,
            } => [(chi1, ind(z <= d1)), (chi2, ind(z >= d2))],
            _ => [zero, zero],
        }
    }

    /// Relative permittivity; infinity for a point inside a Dirichlet body.
    pub fn eps_at(&self, r: &[f64]) -> Result<f64> {
        if r.iter().any(|x| !x.is_finite()) {
            return invalid("position must be finite");
        }
        match self {
            Self::Vacuum => Ok(1.0),
            Self::UserField(u) => {
                let e = (u.eps)(r);
                if e >= 1.0 {
                    Ok(e)
                } else {
                    Err(Error::Domain(format!("user permittivity {e} < 1")))
                }
            }
            _ => Ok(eps_of_terms(&self.planar_terms(r[0]))),
        }
    }

    /// Per-body fractions of the path past each interface (trapezoid rule).
    fn fractions_trapezoid(&self, z: &[f64]) -> [f64; 2] {
        let n = z.len() - 1;
        let mut f = [0.0; 2];
        for &x in &z[..n] {
            let t = self.planar_terms(x);
            f[0] += t[0].1;
            f[1] += t[1].1;
        }
        [f[0] / n as f64, f[1] / n as f64]
    }

    fn fractions_interpolated(&self, z: &[f64]) -> [f64; 2] {
        let n = z.len() - 1;
        let mut f = [0.0; 2];
        for w in z.windows(2) {
            match *self {
                Self::HalfSpace { boundary, .. } => f[0] += frac_above(w[0], w[1], boundary),
                Self::Gap { d1, d2, .. } => {
                    f[0] += frac_below(w[0], w[1], d1);
                    f[1] += frac_above(w[0], w[1], d2);
                }
                _ => {}
            }
        }
        [f[0] / n as f64, f[1] / n as f64]
    }

    fn chis(&self) -> [Susceptibility; 2] {
        let zero = Susceptibility::Finite(0.0);
        match *self {
            Self::HalfSpace { chi, .. } => [chi, zero],
            Self::Gap { chi1, chi2, .. } => [chi1, chi2],
            _ => [zero, zero],
        }
    }

    fn user_average(&self, path: &ScaledPath, interpolated: bool) -> Result<f64> {
        let Self::UserField(u) = self else {
            unreachable!()
        };
        let n = path.n_steps;
        let mut sum = 0.0;
        for k in 0..n {
            let a = path.point(k);
            if interpolated {
                let b = path.point(k + 1);
                if a == b {
                    sum += self.eps_at(&a)?;
                } else {
                    let line = u.line_average.as_ref().ok_or_else(|| {
                        Error::Unsupported("user field without a line-average routine".into())
                    })?;
                    sum += line(&a, &b);
                }
            } else {
                sum += self.eps_at(&a)?;
            }
        }
        Ok(sum / n as f64)
    }

    /// (1/N) sum_k eps(x_k); infinity if a Dirichlet body is visited.
    pub fn path_average_trapezoid(&self, path: &ScaledPath) -> Result<f64> {
        match self {
            Self::Vacuum => Ok(1.0),
            Self::UserField(_) => self.user_average(path, false),
            _ => {
                let f = self.fractions_trapezoid(path.axis(0));
                Ok(eps_of_terms(&zip_terms(self.chis(), f)))
            }
        }
    }

    /// (1/N) sum_j of the straight-line average of eps over segment j.
    pub fn path_average_interpolated(&self, path: &ScaledPath) -> Result<f64> {
        match self {
            Self::Vacuum => Ok(1.0),
            Self::UserField(_) => self.user_average(path, true),
            _ => {
                let f = self.fractions_interpolated(path.axis(0));
                Ok(eps_of_terms(&zip_terms(self.chis(), f)))
            }
        }
    }

    /// Smallest proper time at which the scaled bridge reaches the region the
    /// renormalized integrand needs; infinity if it never does.
    pub fn first_touch_time(&self, bridge: &StandardBridge, x0: f64) -> Result<f64> {
        let (lo, hi) = min_max(bridge.axis(0));
        match *self {
            Self::HalfSpace { boundary, .. } => Ok(if x0 < boundary {
                touch_above(boundary - x0, hi)
            } else {
                touch_below(x0 - boundary, lo)
            }),
            Self::Gap { d1, d2, .. } => Ok(gap_touch_time(d1, d2, x0, lo, hi)),
            Self::Vacuum => Ok(f64::INFINITY),
            Self::UserField(_) => self.user_touch_time(bridge, x0),
        }
    }

    fn user_touch_time(&self, bridge: &StandardBridge, x0: f64) -> Result<f64> {
        let mut src = vec![0.0; bridge.n_axes()];
        src[0] = x0;
        let e0 = self.eps_at(&src)?;
        let quiet = |t: f64| -> Result<bool> {
            let p = scale_shift(bridge, &src, t)?;
            for k in 0..=p.n_steps {
                if (self.eps_at(&p.point(k))? - e0).abs() >= 1e-12 {
                    return Ok(false);
                }
            }
            Ok(true)
        };
        let (mut lo, mut hi) = (1e-12f64, 1e12f64);
        if quiet(hi)? {
            return Ok(f64::INFINITY);
        }
        if !quiet(lo)? {
            return Ok(lo);
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if quiet(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo < 1.0 + 1e-12 {
                break;
            }
        }
        Ok(lo)
    }

    /// <eps>^(-3/2) - eps(x0)^(-3/2) on the trapezoid average.
    pub fn renorm_integrand_cp(&self, path: &ScaledPath) -> Result<f64> {
        self.renorm_cp_with(path, false)
    }

    pub fn renorm_integrand_cp_interpolated(&self, path: &ScaledPath) -> Result<f64> {
        self.renorm_cp_with(path, true)
    }

    fn renorm_cp_with(&self, path: &ScaledPath, interpolated: bool) -> Result<f64> {
        match self {
            Self::Vacuum => Ok(0.0),
            Self::UserField(_) => {
                let avg = self.user_average(path, interpolated)?;
                let e0 = self.eps_at(&path.source_point)?;
                Ok(avg.powf(-1.5) - e0.powf(-1.5))
            }
            _ => {
                let z = path.axis(0);
                let f = if interpolated {
                    self.fractions_interpolated(z)
                } else {
                    self.fractions_trapezoid(z)
                };
                let chis = self.chis();
                let at0 = self.planar_terms(path.source_point[0]);
                Ok(inv_pow(&zip_terms(chis, f), 1.5) - inv_pow(&at0, 1.5))
            }
        }
    }

    /// Three-term renormalized Casimir integrand on one path (trapezoid average).
    pub fn renorm_integrand_casimir(&self, path: &ScaledPath) -> Result<f64> {
        self.renorm_casimir_with(path, false)
    }

    pub fn renorm_integrand_casimir_interpolated(&self, path: &ScaledPath) -> Result<f64> {
        self.renorm_casimir_with(path, true)
    }

    fn renorm_casimir_with(&self, path: &ScaledPath, interpolated: bool) -> Result<f64> {
        let Self::Gap { chi1, chi2, .. } = *self else {
            return invalid("Casimir integrand needs a gap profile");
        };
        let z = path.axis(0);
        let f = if interpolated {
            self.fractions_interpolated(z)
        } else {
            self.fractions_trapezoid(z)
        };
        let at0 = self.planar_terms(path.source_point[0]);
        Ok(casimir_integrand(chi1, chi2, f, [at0[0].1, at0[1].1]))
    }
}

/// [e12(x0)^-1/2 - <e12>^-1/2] - [e1(x0)^-1/2 - <e1>^-1/2] - [e2(x0)^-1/2 - <e2>^-1/2]
/// from per-body path fractions `f` and source-point indicators `at0`.
#[inline]
pub fn casimir_integrand(
    chi1: Susceptibility,
    chi2: Susceptibility,
    f: [f64; 2],
    at0: [f64; 2],
) -> f64 {
    let avg12 = inv_pow(&[(chi1, f[0]), (chi2, f[1])], 0.5);
    let avg1 = inv_pow(&[(chi1, f[0])], 0.5);
    let avg2 = inv_pow(&[(chi2, f[1])], 0.5);
    let src12 = inv_pow(&[(chi1, at0[0]), (chi2, at0[1])], 0.5);
    let src1 = inv_pow(&[(chi1, at0[0])], 0.5);
    let src2 = inv_pow(&[(chi2, at0[1])], 0.5);
    (src12 - avg12) - (src1 - avg1) - (src2 - avg2)
}

#[inline]
fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn zip_terms(chis: [Susceptibility; 2], f: [f64; 2]) -> [(Susceptibility, f64); 2] {
    [(chis[0], f[0]), (chis[1], f[1])]
}

fn eps_of_terms(terms: &[(Susceptibility, f64)]) -> f64 {
    let mut eps = 1.0;
    for &(chi, f) in terms {
        if f > 0.0 {
            match chi {
                Susceptibility::Finite(c) => eps += c * f,
                Susceptibility::Dirichlet => return f64::INFINITY,
            }
        }
    }
    eps
}

/// Fraction of the straight segment a -> b lying at or above `d`.
#[inline]
pub fn frac_above(a: f64, b: f64, d: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if lo >= d {
        1.0
    } else if hi < d {
        0.0
    } else {
        (hi - d) / (hi - lo)
    }
}

/// Fraction of the straight segment a -> b lying at or below `d`.
#[inline]
pub fn frac_below(a: f64, b: f64, d: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if hi <= d {
        1.0
    } else if lo > d {
        0.0
    } else {
        (d - lo) / (hi - lo)
    }
}

/// (l / max)^2, infinite when the bridge never goes up.
#[inline]
pub fn touch_above(l: f64, max_b: f64) -> f64 {
    if max_b > 0.0 {
        let r = l / max_b;
        r * r
    } else {
        f64::INFINITY
    }
}

#[inline]
pub fn touch_below(l: f64, min_b: f64) -> f64 {
    touch_above(l, -min_b)
}

/// Gap first-touch time: both bodies from inside the gap, the other body
/// from inside a body.
#[inline]
pub fn gap_touch_time(d1: f64, d2: f64, x0: f64, lo: f64, hi: f64) -> f64 {
    if x0 <= d1 {
        touch_above(d2 - x0, hi)
    } else if x0 >= d2 {
        touch_below(x0 - d1, lo)
    } else {
        touch_above(d2 - x0, hi).max(touch_below(x0 - d1, lo))
    }
}

/// hbar, c, eps0, static polarizability and spacetime dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub c: f64,
    pub eps0: f64,
    pub alpha0: f64,
    pub dim: u32,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::natural()
    }
}

impl PhysicalConstants {
    pub fn natural() -> Self {
        Self {
            hbar: 1.0,
            c: 1.0,
            eps0: 1.0,
            alpha0: 1.0,
            dim: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return invalid("spacetime dimension must be at least 2");
        }
        if !(self.hbar > 0.0 && self.c > 0.0 && self.eps0 > 0.0 && self.alpha0 >= 0.0) {
            return invalid("constants must be positive");
        }
        Ok(())
    }
}
