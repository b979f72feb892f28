//! Adaptive Gauss-Kronrod integration and fixed Gauss rules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-300,
            max_subdivisions: 2000,
        }
    }
}

impl QuadOptions {
    pub fn rel(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }

    pub fn with_abs(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
    pub converged: bool,
}

impl Quad {
    pub fn require(self, what: &str) -> Result<f64> {
        if self.converged && self.value.is_finite() {
            Ok(self.value)
        } else {
            Err(Error::Numerical {
                what: what.to_string(),
                estimate: self.value,
                error: self.error,
            })
        }
    }
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    let mut resabs = resk.abs();
    let mut fv = [(0.0, 0.0); 7];
    for j in 0..7 {
        let x = h * XGK[j];
        let f1 = f(c - x);
        let f2 = f(c + x);
        fv[j] = (f1, f2);
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = resk * 0.5;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv[j].0 - mean).abs() + (fv[j].1 - mean).abs());
    }
    let result = resk * h;
    let resabs = resabs * h.abs();
    let resasc = resasc * h.abs();
    let mut err = ((resk - resg) * h).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (result, err)
}

/// Globally adaptive Gauss-Kronrod (7/15) over the intervals delimited by `points`.
pub fn integrate_breaks<F: FnMut(f64) -> f64>(mut f: F, points: &[f64], opts: QuadOptions) -> Quad {
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in points.windows(2) {
        if w[1] == w[0] {
            continue;
        }
        let (v, e) = gk15(&mut f, w[0], w[1]);
        total += v;
        total_err += e;
        heap.push(Piece {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
        });
    }
    let mut n = heap.len();
    loop {
        let tol = opts.abs_tol.max(opts.rel_tol * total.abs());
        if total_err <= tol || !total.is_finite() {
            break;
        }
        if n >= opts.max_subdivisions {
            return Quad {
                value: total,
                error: total_err,
                intervals: n,
                converged: false,
            };
        }
        let Some(p) = heap.pop() else { break };
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            // Interval cannot be split further in floating point.
            return Quad {
                value: total,
                error: total_err,
                intervals: n,
                converged: false,
            };
        }
        let (v1, e1) = gk15(&mut f, p.a, m);
        let (v2, e2) = gk15(&mut f, m, p.b);
        total += v1 + v2 - p.value;
        total_err += e1 + e2 - p.error;
        heap.push(Piece {
            a: p.a,
            b: m,
            value: v1,
            error: e1,
        });
        heap.push(Piece {
            a: m,
            b: p.b,
            value: v2,
            error: e2,
        });
        n += 1;
        if n % 64 == 0 {
            // Refresh the running sums to shed accumulated rounding.
            total = heap.iter().map(|p| p.value).sum();
            total_err = heap.iter().map(|p| p.error).sum();
        }
    }
    let total: f64 = heap.iter().map(|p| p.value).sum();
    let total_err: f64 = heap.iter().map(|p| p.error).sum();
    Quad {
        value: total,
        error: total_err,
        intervals: n,
        converged: total.is_finite(),
    }
}

pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Quad {
    integrate_breaks(f, &[a, b], opts)
}

/// Integral over [a, inf) via x = a + (1 - u)/u.
pub fn integrate_to_inf<F: FnMut(f64) -> f64>(mut f: F, a: f64, opts: QuadOptions) -> Quad {
    integrate(
        |u| {
            if u <= 0.0 {
                return 0.0;
            }
            let x = a + (1.0 - u) / u;
            let v = f(x) / (u * u);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        opts,
    )
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Generalized Gauss-Laguerre rule for weight x^alpha e^{-x} on [0, inf).
/// Golub-Welsch eigenvalues, polished by Newton steps on the three-term recurrence.
pub fn gauss_laguerre(n: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1 && alpha > -1.0);
    let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jac[(k, k)] = 2.0 * k as f64 + alpha + 1.0;
        if k + 1 < n {
            let b = ((k as f64 + 1.0) * (k as f64 + 1.0 + alpha)).sqrt();
            jac[(k, k + 1)] = b;
            jac[(k + 1, k)] = b;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(jac);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    let ln_norm = statrs::function::gamma::ln_gamma(n as f64 + alpha + 1.0)
        - statrs::function::gamma::ln_gamma(n as f64 + 1.0);
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..8 {
            let (p, d) = laguerre(n, alpha, *x);
            let dx = p / d;
            *x -= dx;
            if dx.abs() <= 1e-15 * x.abs() {
                break;
            }
        }
        let (_, d) = laguerre(n, alpha, *x);
        // w = Gamma(n+alpha+1) / (n! x L'_n(x)^2)
        weights.push((ln_norm - x.ln() - 2.0 * d.abs().ln()).exp());
    }
    (nodes, weights)
}

fn laguerre(n: usize, alpha: f64, x: f64) -> (f64, f64) {
    let mut l0 = 1.0;
    let mut l1 = 1.0 + alpha - x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let l2 = ((2.0 * kf + 1.0 + alpha - x) * l1 - (kf + alpha) * l0) / (kf + 1.0);
        l0 = l1;
        l1 = l2;
    }
    let nf = n as f64;
    let d = (nf * l1 - (nf + alpha) * l0) / x;
    (l1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn kronrod_weights_sum() {
        let s: f64 = 2.0 * WGK[..7].iter().sum::<f64>() + WGK[7];
        assert!((s - 2.0).abs() < 1e-15);
        let g: f64 = 2.0 * (WG[0] + WG[1] + WG[2]) + WG[3];
        assert!((g - 2.0).abs() < 1e-15);
    }

    #[test]
    fn polynomial_exact() {
        let q = integrate(|x| x.powi(20) - 3.0 * x.powi(7), -1.0, 2.0, QuadOptions::rel(1e-14));
        let exact = (2f64.powi(21) + 1.0) / 21.0 - 3.0 * (256.0 - 1.0) / 8.0;
        assert!((q.value - exact).abs() < 1e-9 * exact.abs());
    }

    #[test]
    fn endpoint_singularity() {
        let q = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, QuadOptions::rel(1e-10));
        assert!(q.converged);
        assert!((q.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn semi_infinite() {
        let q = integrate_to_inf(|x: f64| (-x * x).exp(), 0.0, QuadOptions::rel(1e-12));
        assert!((q.value - PI.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cap_reported() {
        let q = integrate(
            |x: f64| (1.0 / x).sin(),
            1e-9,
            1.0,
            QuadOptions {
                rel_tol: 1e-14,
                abs_tol: 0.0,
                max_subdivisions: 20,
            },
        );
        assert!(!q.converged);
        assert!(q.require("oscillatory").is_err());
    }

    #[test]
    fn legendre_rule() {
        let (x, w) = gauss_legendre(20);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(38)).sum();
        assert!((s - 2.0 / 39.0).abs() < 1e-14);
    }

    #[test]
    fn laguerre_rule_moments() {
        let alpha = 0.5;
        let (x, w) = gauss_laguerre(64, alpha);
        for k in 0..10 {
            let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum();
            let exact = statrs::function::gamma::gamma(k as f64 + alpha + 1.0);
            assert!((s / exact - 1.0).abs() < 1e-12, "k={k}");
        }
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * (-x).exp()).sum();
        let exact = statrs::function::gamma::gamma(1.5) / 2f64.powf(1.5);
        assert!((s / exact - 1.0).abs() < 1e-10);
    }
}
