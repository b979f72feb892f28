//! Occupation time of a pinned Brownian path above a level.
//!
//! A path runs from y(0) = a to y(t) = c with unit diffusion (variance t per
//! unit time). T_s is the time it spends above d. Internally everything is
//! expressed in the scaled distances alpha = (d - a)/sqrt(t) and
//! beta = (d - c)/sqrt(t), with the sojourn fraction y = T_s/t.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::{Read, Write};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{gauss_legendre, integrate, integrate_breaks, QuadOptions};
use crate::special::{erfc, erfcx, exp_erfc};

const SEAM: f64 = 1e-12;
/// Segments whose touch probability is below this are treated as never touching.
pub const TOUCH_FLOOR: f64 = 1e-17;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SojournParams {
    pub a: f64,
    pub c: f64,
    pub t: f64,
    pub d: f64,
}

impl SojournParams {
    pub fn new(a: f64, c: f64, t: f64, d: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return invalid(format!("elapsed time must be positive, got {t}"));
        }
        if a.is_nan() || c.is_nan() || d.is_nan() {
            return invalid("NaN endpoint or boundary");
        }
        Ok(Self { a, c, t, d })
    }

    fn scaled(&self) -> (f64, f64) {
        let r = self.t.sqrt();
        ((self.d - self.a) / r, (self.d - self.c) / r)
    }
}

/// Probability that a free path started at distance d below a plane reaches it within T.
pub fn crossing_probability(d: f64, t: f64) -> f64 {
    if d <= 0.0 {
        1.0
    } else {
        (-2.0 * d * d / t).exp()
    }
}

#[derive(Clone, Copy, Debug)]
enum Branch {
    /// Both endpoints below the level, at scaled distances alpha, beta >= 0.
    Below { alpha: f64, beta: f64 },
    /// Lower endpoint q below the level, upper endpoint p above it.
    Straddle { p: f64, q: f64 },
    /// Both endpoints above the level, at scaled distances alpha, beta >= 0.
    Above { alpha: f64, beta: f64 },
}

#[derive(Clone, Copy, Debug)]
struct Branches {
    items: [Branch; 3],
    len: usize,
}

impl Branches {
    fn as_slice(&self) -> &[Branch] {
        &self.items[..self.len]
    }
}

fn branches(alpha: f64, beta: f64) -> Branches {
    let lo = alpha.min(beta);
    let hi = alpha.max(beta);
    let mut items = [Branch::Straddle { p: 0.0, q: 0.0 }; 3];
    let mut len = 0;
    if lo >= -SEAM {
        items[len] = Branch::Below { alpha: lo.max(0.0), beta: hi.max(0.0) };
        len += 1;
    }
    if lo <= SEAM && hi >= -SEAM {
        items[len] = Branch::Straddle { p: (-lo).max(0.0), q: hi.max(0.0) };
        len += 1;
    }
    if hi <= SEAM {
        items[len] = Branch::Above { alpha: (-hi).max(0.0), beta: (-lo).max(0.0) };
        len += 1;
    }
    Branches { items, len }
}

fn atoms(br: Branch) -> (f64, f64) {
    match br {
        Branch::Below { alpha, beta } => (-(-2.0 * alpha * beta).exp_m1(), 0.0),
        Branch::Above { alpha, beta } => (0.0, -(-2.0 * alpha * beta).exp_m1()),
        Branch::Straddle { .. } => (0.0, 0.0),
    }
}

/// Continuous density in the angle theta, y = sin^2(theta/2), dy = sqrt(y(1-y)) dtheta.
fn theta_density(br: Branch, theta: f64) -> f64 {
    match br {
        Branch::Below { alpha, beta } => {
            (-2.0 * alpha * beta).exp() * below_theta(alpha + beta, theta)
        }
        Branch::Above { alpha, beta } => {
            (-2.0 * alpha * beta).exp() * below_theta(alpha + beta, PI - theta)
        }
        Branch::Straddle { p, q } => straddle_theta(p, q, theta),
    }
}

fn below_theta(kappa: f64, theta: f64) -> f64 {
    let (sh, ch) = (0.5 * theta).sin_cos();
    let ym = ch * ch;
    let sq = sh * ch;
    let z = kappa * sh / (ch * std::f64::consts::SQRT_2);
    let gauss = if z.is_finite() { (-z * z).exp() } else { 0.0 };
    kappa * (2.0 / PI).sqrt() * ym * gauss + (1.0 - kappa * kappa) * erfc(z) * sq
}

fn straddle_theta(p: f64, q: f64, theta: f64) -> f64 {
    let (sh, ch) = (0.5 * theta).sin_cos();
    let y = sh * sh;
    let ym = ch * ch;
    let sq = sh * ch;
    let pp = if p == 0.0 { 0.0 } else { p * p / (2.0 * y) };
    let qq = if q == 0.0 { 0.0 } else { q * q / (2.0 * ym) };
    let e = 0.5 * (p + q) * (p + q) - pp - qq;
    let first = if e.is_finite() { (2.0 / PI).sqrt() * (p * y + q * ym) * e.exp() } else { 0.0 };
    if sq <= 0.0 {
        return first;
    }
    let w = (p * ym + q * y) / (std::f64::consts::SQRT_2 * sq);
    let second = (1.0 - (q - p) * (q - p)) * (2.0 * p * q - w * w).exp() * erfcx(w) * sq;
    first + second
}

/// Law of T_s for one set of parameters.
#[derive(Clone, Debug)]
pub struct SojournDensity {
    pub params: SojournParams,
    pub atom_at_zero: f64,
    pub atom_at_t: f64,
    branches: Branches,
}

pub fn density(params: SojournParams) -> Result<SojournDensity> {
    let params = SojournParams::new(params.a, params.c, params.t, params.d)?;
    let (alpha, beta) = params.scaled();
    let branches = branches(alpha, beta);
    let n = branches.len as f64;
    let (mut z, mut t) = (0.0, 0.0);
    for &b in branches.as_slice() {
        let (a0, at) = atoms(b);
        z += a0;
        t += at;
    }
    Ok(SojournDensity { params, atom_at_zero: z / n, atom_at_t: t / n, branches })
}

impl SojournDensity {
    /// Density of the continuous part at sojourn x in (0, t).
    pub fn continuous(&self, x: f64) -> f64 {
        let t = self.params.t;
        if !(x > 0.0 && x < t) {
            return 0.0;
        }
        let y = x / t;
        let theta = 2.0 * y.sqrt().asin();
        let sq = (y * (1.0 - y)).sqrt();
        self.theta_density(theta) / (sq * t)
    }

    /// Continuous part as a density in theta on [0, pi], where x = t sin^2(theta/2).
    pub fn theta_density(&self, theta: f64) -> f64 {
        let bs = self.branches.as_slice();
        bs.iter().map(|&b| theta_density(b, theta)).sum::<f64>() / bs.len() as f64
    }

    pub fn continuous_mass(&self) -> Result<f64> {
        integrate_breaks(|th| self.theta_density(th), &self.theta_breaks(), QuadOptions::rel(1e-12).with_abs(1e-15))
            .require("sojourn continuous mass")
    }

    /// Laplace transform of the full law, by quadrature over the density.
    pub fn laplace(&self, s: f64) -> Result<f64> {
        let t = self.params.t;
        let cont = integrate_breaks(
            |th| {
                let y = (0.5 * th).sin().powi(2);
                (-s * t * y).exp() * self.theta_density(th)
            },
            &self.theta_breaks(),
            QuadOptions::rel(1e-12).with_abs(1e-15),
        )
        .require("sojourn laplace transform")?;
        Ok(self.atom_at_zero + self.atom_at_t * (-s * t).exp() + cont)
    }

    /// Mean of the full law, by quadrature over the density.
    pub fn mean_by_quadrature(&self) -> Result<f64> {
        let t = self.params.t;
        let cont = integrate_breaks(
            |th| t * (0.5 * th).sin().powi(2) * self.theta_density(th),
            &self.theta_breaks(),
            QuadOptions::rel(1e-12).with_abs(1e-15),
        )
        .require("sojourn mean")?;
        Ok(self.atom_at_t * t + cont)
    }

    fn theta_breaks(&self) -> Vec<f64> {
        let mut pts = vec![0.0, 0.25 * PI, 0.5 * PI, 0.75 * PI, PI];
        let near = |y: f64| 2.0 * y.clamp(0.0, 1.0).sqrt().asin();
        for &b in self.branches.as_slice() {
            let (lower, upper) = match b {
                Branch::Below { alpha, beta } => (Some(alpha + beta), None),
                Branch::Above { alpha, beta } => (None, Some(alpha + beta)),
                Branch::Straddle { p, q } => (Some(p), Some(q)),
            };
            for (scale, flip) in [(lower, false), (upper, true)] {
                let Some(k) = scale else { continue };
                for y in [k * k / 4.0, k * k, 1.0 / (k * k).max(1e-300)] {
                    if y > 0.0 && y < 0.5 {
                        let th = near(y);
                        pts.push(if flip { PI - th } else { th });
                    }
                }
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

/// (1 - exp(-x)) / x with its x -> 0 limit.
fn h(x: f64) -> f64 {
    if x.abs() < 1e-10 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

fn mgf_below(alpha: f64, beta: f64, s: f64, mirrored: bool, opts: QuadOptions) -> Result<f64> {
    let kappa = alpha + beta;
    let off = 0.5 * (alpha - beta) * (alpha - beta);
    let touch_free = -(-2.0 * alpha * beta).exp_m1();
    let atom = if mirrored { (-s).exp() * touch_free } else { touch_free };
    let tilt = |tau: f64| if mirrored { (-s * tau).exp() } else { 1.0 };
    // tau in [0, 1/2] through tau = kappa^2 / (2 w^2), w = kappa + r.
    let first = integrate(
        |r| {
            let w = kappa + r;
            let tau = if kappa == 0.0 { 0.0 } else { kappa * kappa / (2.0 * w * w) };
            let u = 1.0 - tau;
            (off - w * w).exp() * h(s * u) / u.sqrt() * tilt(tau)
        },
        0.0,
        9.0,
        opts,
    )
    .require("sojourn mgf")?
        * 2.0
        / PI.sqrt();
    // tau in [1/2, 1] through tau = 1 - v^2.
    let second = if kappa == 0.0 {
        0.0
    } else {
        integrate(
            |v| {
                let tau = 1.0 - v * v;
                let e = off - kappa * kappa / (2.0 * tau);
                e.exp() * tau.powf(-1.5) * h(s * v * v) * tilt(tau)
            },
            0.0,
            FRAC_1_SQRT_2,
            opts,
        )
        .require("sojourn mgf")?
            * 2.0
            * kappa
            / (2.0 * PI).sqrt()
    };
    Ok(atom + first + second)
}

fn mgf_straddle(p: f64, q: f64, s: f64, opts: QuadOptions) -> Result<f64> {
    // The kernel splits into a q-term singular as tau -> 0 and a p-term singular
    // as tau -> 1; each is integrated by parts on its singular half.
    let off = 0.5 * (p + q) * (p + q);
    let ex = |tau: f64, tm: f64| {
        let e = off - if p == 0.0 { 0.0 } else { p * p / (2.0 * tau) } - if q == 0.0 { 0.0 } else { q * q / (2.0 * tm) };
        if e < -700.0 {
            0.0
        } else {
            e.exp()
        }
    };
    let psi = |tau: f64| -tau * h(s * tau);
    let dpsi = |tau: f64| -(-s * tau).exp();
    let vmax = FRAC_1_SQRT_2;
    let breaks = |scale: f64| {
        let mut b = vec![0.0, vmax];
        for k in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let v = k * scale;
            if v > 0.0 && v < vmax {
                b.push(v);
            }
        }
        b.sort_by(f64::total_cmp);
        b
    };
    let edge = 8.0 * (q - p) * psi(0.5) * ex(0.5, 0.5);
    // q-term on [0, 1/2], by parts, tau = v^2.
    let a_lo = integrate_breaks(
        |v| {
            let tau = v * v;
            let tm = 1.0 - tau;
            let ps = psi(tau);
            4.0 * q * ex(tau, tm) * (1.5 * tm.powf(-2.5) * ps - 0.5 * q * q * tm.powf(-3.5) * ps + tm.powf(-1.5) * dpsi(tau))
        },
        &breaks(p),
        opts,
    )
    .require("sojourn mgf")?;
    // p-term on [1/2, 1], by parts, tau = 1 - v^2.
    let b_up = integrate_breaks(
        |v| {
            let tm = v * v;
            let tau = 1.0 - tm;
            let ps = psi(tau);
            4.0 * p * ex(tau, tm) * (-1.5 * tau.powf(-2.5) * ps + 0.5 * p * p * tau.powf(-3.5) * ps + tau.powf(-1.5) * dpsi(tau))
        },
        &breaks(q),
        opts,
    )
    .require("sojourn mgf")?;
    // q-term on [1/2, 1], tau = 1 - v^2.
    let a_up = integrate_breaks(
        |v| {
            let tm = v * v;
            let tau = 1.0 - tm;
            let e = ex(tau, tm);
            if e == 0.0 {
                return 0.0;
            }
            2.0 * q / tm * (p * p - tau) * tau.powf(-2.5) * e * psi(tau)
        },
        &breaks(q),
        opts,
    )
    .require("sojourn mgf")?;
    // p-term on [0, 1/2], tau = v^2.
    let b_lo = integrate_breaks(
        |v| {
            let tau = v * v;
            let tm = 1.0 - tau;
            let e = ex(tau, tm);
            if e == 0.0 {
                return 0.0;
            }
            2.0 * p * (psi(tau) / tau) * (tm - q * q) * tm.powf(-2.5) * e
        },
        &breaks(p),
        opts,
    )
    .require("sojourn mgf")?;
    Ok((edge - a_lo + a_up + b_lo - b_up) / (2.0 * PI).sqrt())
}

/// Segment MGF in scaled variables: alpha = (d-a)/sqrt(t), beta = (d-c)/sqrt(t),
/// argument s*t.
pub fn mgf_scaled(alpha: f64, beta: f64, s: f64, opts: QuadOptions) -> Result<f64> {
    let bs = branches(alpha, beta);
    let mut sum = 0.0;
    let mut count = 0;
    for &b in bs.as_slice() {
        // On a seam the one-sided branch equals the straddle limit.
        if matches!(b, Branch::Straddle { .. }) && bs.len > 1 {
            continue;
        }
        count += 1;
        sum += match b {
            Branch::Below { alpha, beta } => mgf_below(alpha, beta, s, false, opts)?,
            Branch::Above { alpha, beta } => mgf_below(alpha, beta, s, true, opts)?,
            Branch::Straddle { p, q } => mgf_straddle(p, q, s, opts)?,
        };
    }
    Ok(sum / count as f64)
}

/// E[exp(-s T_s)].
pub fn mgf(params: SojournParams, s: f64) -> Result<f64> {
    let params = SojournParams::new(params.a, params.c, params.t, params.d)?;
    if !(s >= 0.0) {
        return invalid(format!("mgf argument must be non-negative, got {s}"));
    }
    let (alpha, beta) = params.scaled();
    mgf_scaled(alpha, beta, s * params.t, QuadOptions::rel(1e-12).with_abs(1e-14))
}

/// E[T_s] in closed form.
pub fn mean(params: SojournParams) -> f64 {
    let SojournParams { a, c, t, d } = params;
    let k = 2.0 * d - a - c;
    let x = if d > a && d > c {
        (d - a) * (d - c)
    } else if d < a && d < c {
        (a - d) * (c - d)
    } else {
        0.0
    };
    let sgn = if k > 0.0 {
        1.0
    } else if k < 0.0 {
        -1.0
    } else {
        0.0
    };
    let m = ((d - a).abs() + (d - c).abs()) / (2.0 * t).sqrt();
    let tail = if k == 0.0 {
        0.0
    } else {
        (PI * t / 8.0).sqrt() * k * exp_erfc((c - a) * (c - a) / (2.0 * t), m)
    };
    let v = 0.5 * t + sgn * 0.5 * t * (-2.0 * x / t).exp_m1() - tail;
    v.clamp(0.0, t)
}

// ---------------------------------------------------------------------------
// Tables

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Half-width of the (alpha, beta) square.
    pub extent: f64,
    /// Node spacing; extent/spacing must be an integer so the seams fall on nodes.
    pub spacing: f64,
    /// Quantile nodes per (alpha, beta) node; 0 skips the inverse-CDF grid.
    pub quantile_nodes: usize,
    /// Theta intervals used to build each CDF.
    pub theta_intervals: usize,
    /// Scaled MGF arguments s*t, one layer each.
    pub mgf_arguments: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { extent: 8.0, spacing: 0.1, quantile_nodes: 512, theta_intervals: 512, mgf_arguments: Vec::new() }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0 && self.spacing > 0.0) {
            return invalid("grid extent and spacing must be positive");
        }
        let r = self.extent / self.spacing;
        if (r - r.round()).abs() > 1e-9 || r < 2.0 {
            return invalid("extent must be an integer multiple (>= 2) of spacing");
        }
        if self.quantile_nodes == 1 {
            return invalid("need at least two quantile nodes");
        }
        if self.quantile_nodes > 0 && self.theta_intervals < 16 {
            return invalid("need at least 16 theta intervals");
        }
        if self.mgf_arguments.iter().any(|s| !(*s >= 0.0)) {
            return invalid("mgf arguments must be non-negative");
        }
        Ok(())
    }

    fn half(&self) -> usize {
        (self.extent / self.spacing).round() as usize
    }

    fn nodes(&self) -> usize {
        2 * self.half() + 1
    }

    fn coord(&self, i: usize) -> f64 {
        (i as f64 - self.half() as f64) * self.spacing
    }
}

/// Interpolation tables for sampling T_s and for segment MGFs.
#[derive(Clone, Debug)]
pub struct SojournTables {
    pub spec: GridSpec,
    /// Max abs error in the sojourn fraction of the inverse-CDF grid, at probe points.
    pub quantile_error: f64,
    /// Max abs error of the MGF grid, at probe points.
    pub mgf_error: f64,
    /// Per-layer MGF error at the probe points.
    pub layer_error: Vec<f64>,
    /// Sojourn fractions (not angles): the fraction is polynomial in the
    /// endpoint offsets near the seams, the angle has a boundary layer there.
    quantiles: Vec<f32>,
    mgf: Vec<f64>,
}

fn tri_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

fn chebyshev_node(k: usize, n: usize) -> f64 {
    0.5 * (1.0 - (PI * k as f64 / (n - 1) as f64).cos())
}

/// Continuous-part CDF over a uniform theta grid, as cumulative sums.
fn theta_cdf(alpha: f64, beta: f64, intervals: usize, gl: &(Vec<f64>, Vec<f64>)) -> Vec<f64> {
    let bs = branches(alpha, beta);
    let hstep = PI / intervals as f64;
    let mut cum = Vec::with_capacity(intervals + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for k in 0..intervals {
        let mid = (k as f64 + 0.5) * hstep;
        let mut s = 0.0;
        for (x, w) in gl.0.iter().zip(&gl.1) {
            let th = mid + 0.5 * hstep * x;
            let v: f64 = bs.as_slice().iter().map(|&b| theta_density(b, th)).sum();
            s += w * v;
        }
        acc += 0.5 * hstep * s / bs.len as f64;
        cum.push(acc);
    }
    cum
}

/// Theta/pi at conditional probability v of the continuous part.
fn invert_cdf(cum: &[f64], v: f64) -> f64 {
    let n = cum.len() - 1;
    let total = cum[n];
    if !(total > 0.0) {
        return v;
    }
    let target = v * total;
    let k = cum.partition_point(|&c| c <= target).clamp(1, n);
    let (c0, c1) = (cum[k - 1], cum[k]);
    let frac = if c1 > c0 { ((target - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.0 };
    ((k - 1) as f64 + frac) / n as f64
}

fn sample_direct(alpha: f64, beta: f64, v: f64, intervals: usize) -> f64 {
    let gl = gauss_legendre(3);
    let cum = theta_cdf(alpha, beta, intervals, &gl);
    let th = PI * invert_cdf(&cum, v);
    (0.5 * th).sin().powi(2)
}

/// 4-point Lagrange stencil confined to one side of the zero node.
fn stencil(spec: &GridSpec, x: f64) -> (usize, [f64; 4]) {
    let n = spec.nodes();
    let mid = spec.half();
    let f = (x + spec.extent) / spec.spacing;
    let i = (f.floor() as isize).clamp(0, n as isize - 2) as usize;
    let (lo, hi) = if i < mid { (0, mid) } else { (mid, n - 1) };
    let start = (i as isize - 1).clamp(lo as isize, hi as isize - 3) as usize;
    let u = f - start as f64;
    let mut w = [0.0; 4];
    for (k, wk) in w.iter_mut().enumerate() {
        let mut p = 1.0;
        for m in 0..4 {
            if m != k {
                p *= (u - m as f64) / (k as f64 - m as f64);
            }
        }
        *wk = p;
    }
    (start, w)
}

impl SojournTables {
    pub fn build(spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.nodes();
        let tri = n * (n + 1) / 2;
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (0..=j).map(move |i| (i, j))).collect();
        debug_assert_eq!(pairs.len(), tri);

        let nq = spec.quantile_nodes;
        let mut quantiles = Vec::new();
        if nq > 0 {
            let gl = gauss_legendre(3);
            let rows: Vec<Vec<f32>> = pairs
                .par_iter()
                .map(|&(i, j)| {
                    let cum = theta_cdf(spec.coord(i), spec.coord(j), spec.theta_intervals, &gl);
                    (0..nq).map(|k| (0.5 * PI * invert_cdf(&cum, chebyshev_node(k, nq))).sin().powi(2) as f32).collect()
                })
                .collect();
            quantiles = rows.into_iter().flatten().collect();
        }

        let ns = spec.mgf_arguments.len();
        let mut mgf = Vec::new();
        if ns > 0 {
            let opts = QuadOptions::rel(1e-10).with_abs(1e-12);
            let rows: Vec<Result<Vec<f64>>> = pairs
                .par_iter()
                .map(|&(i, j)| {
                    spec.mgf_arguments.iter().map(|&s| mgf_scaled(spec.coord(i), spec.coord(j), s, opts)).collect()
                })
                .collect();
            let mut tri_vals = Vec::with_capacity(tri * ns);
            for r in rows {
                tri_vals.extend(r?);
            }
            // Full square, layers innermost.
            mgf = vec![0.0; n * n * ns];
            for i in 0..n {
                for j in 0..n {
                    let src = tri_index(i, j) * ns;
                    let dst = (i * n + j) * ns;
                    mgf[dst..dst + ns].copy_from_slice(&tri_vals[src..src + ns]);
                }
            }
        }

        let mut tables = Self { spec: spec.clone(), quantile_error: 0.0, mgf_error: 0.0, layer_error: Vec::new(), quantiles, mgf };
        tables.probe_errors()?;
        Ok(tables)
    }

    fn probe_errors(&mut self) -> Result<()> {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        let ext = self.spec.extent * 0.75;
        let mut qerr: f64 = 0.0;
        let mut merr: f64 = 0.0;
        let mut layer_err = vec![0.0f64; self.spec.mgf_arguments.len()];
        let mut buf = vec![0.0; self.spec.mgf_arguments.len()];
        for _ in 0..48 {
            let alpha = rng.random_range(-ext..ext);
            let beta = rng.random_range(-ext..ext);
            if self.spec.quantile_nodes > 0 {
                for &v in &[0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
                    let a = self.quantile_lookup(alpha, beta, v);
                    let b = sample_direct(alpha, beta, v, self.spec.theta_intervals);
                    qerr = qerr.max((a - b).abs());
                }
            }
            if !self.mgf.is_empty() {
                self.mgf_lookup(alpha, beta, &mut buf);
                for (k, &s) in self.spec.mgf_arguments.iter().enumerate() {
                    let direct = mgf_scaled(alpha, beta, s, QuadOptions::rel(1e-10).with_abs(1e-12))?;
                    merr = merr.max((buf[k] - direct).abs());
                    layer_err[k] = layer_err[k].max((buf[k] - direct).abs());
                }
            }
        }
        self.layer_error = layer_err;
        self.quantile_error = qerr;
        self.mgf_error = merr;
        Ok(())
    }

    pub fn has_quantiles(&self) -> bool {
        !self.quantiles.is_empty()
    }

    pub fn has_mgf(&self) -> bool {
        !self.mgf.is_empty()
    }

    fn in_range(&self, alpha: f64, beta: f64) -> bool {
        alpha.abs() <= self.spec.extent && beta.abs() <= self.spec.extent
    }

    /// Sojourn fraction at conditional probability v of the continuous part.
    fn quantile_lookup(&self, alpha: f64, beta: f64, v: f64) -> f64 {
        let nq = self.spec.quantile_nodes;
        let pos = (1.0 - 2.0 * v).clamp(-1.0, 1.0).acos() * (nq - 1) as f64 / PI;
        let k = (pos.floor() as usize).min(nq - 2);
        let (v0, v1) = (chebyshev_node(k, nq), chebyshev_node(k + 1, nq));
        let fv = if v1 > v0 { ((v - v0) / (v1 - v0)).clamp(0.0, 1.0) } else { 0.0 };
        let (si, wi) = stencil(&self.spec, alpha);
        let (sj, wj) = stencil(&self.spec, beta);
        let mut q = 0.0;
        for (a, wa) in wi.iter().enumerate() {
            for (b, wb) in wj.iter().enumerate() {
                let base = tri_index(si + a, sj + b) * nq + k;
                let q0 = self.quantiles[base] as f64;
                let q1 = self.quantiles[base + 1] as f64;
                q += wa * wb * (q0 + fv * (q1 - q0));
            }
        }
        q.clamp(0.0, 1.0)
    }

    /// Interpolated MGF layers at (alpha, beta); caller guarantees range.
    fn mgf_lookup(&self, alpha: f64, beta: f64, out: &mut [f64]) {
        let n = self.spec.nodes();
        let ns = self.spec.mgf_arguments.len();
        let (si, wi) = stencil(&self.spec, alpha);
        let (sj, wj) = stencil(&self.spec, beta);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (a, wa) in wi.iter().enumerate() {
            for (b, wb) in wj.iter().enumerate() {
                let w = wa * wb;
                let base = ((si + a) * n + sj + b) * ns;
                for (o, v) in out.iter_mut().zip(&self.mgf[base..base + ns]) {
                    *o += w * v;
                }
            }
        }
    }

    /// MGF of the scaled segment (alpha, beta) at every tabulated argument.
    ///
    /// Segments that essentially never touch (or never leave) the region are
    /// evaluated in closed form; out-of-range segments fall back to direct quadrature.
    pub fn segment_mgf(&self, alpha: f64, beta: f64, out: &mut [f64]) -> Result<()> {
        if self.mgf.is_empty() {
            return Err(Error::Table("no mgf layers in table".into()));
        }
        let args = &self.spec.mgf_arguments;
        if alpha * beta > 0.0 && (-2.0 * alpha * beta).exp() < TOUCH_FLOOR {
            if alpha > 0.0 {
                out.iter_mut().for_each(|o| *o = 1.0);
            } else {
                out.iter_mut().zip(args).for_each(|(o, s)| *o = (-s).exp());
            }
            return Ok(());
        }
        if self.in_range(alpha, beta) {
            self.mgf_lookup(alpha, beta, out);
            return Ok(());
        }
        let opts = QuadOptions::rel(1e-10).with_abs(1e-12);
        for (o, &s) in out.iter_mut().zip(args) {
            *o = mgf_scaled(alpha, beta, s, opts)?;
        }
        Ok(())
    }

    /// Sojourn fraction T_s/t of the scaled segment for one uniform u.
    pub fn sample_scaled(&self, alpha: f64, beta: f64, u: f64) -> f64 {
        let bs = branches(alpha, beta);
        let (mut z, mut t) = (0.0, 0.0);
        for &b in bs.as_slice() {
            let (a0, at) = atoms(b);
            z += a0;
            t += at;
        }
        z /= bs.len as f64;
        t /= bs.len as f64;
        if u < z {
            return 0.0;
        }
        if u >= 1.0 - t {
            return 1.0;
        }
        let cont = 1.0 - z - t;
        let v = ((u - z) / cont).clamp(0.0, 1.0);
        if self.has_quantiles() && self.in_range(alpha, beta) {
            self.quantile_lookup(alpha, beta, v)
        } else {
            sample_direct(alpha, beta, v, self.spec.theta_intervals.max(1024))
        }
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&TableHeader {
            spec: self.spec.clone(),
            quantile_error: self.quantile_error,
            mgf_error: self.mgf_error,
            layer_error: self.layer_error.clone(),
            quantiles: self.quantiles.len(),
            mgf: self.mgf.len(),
        })
        .map_err(|e| Error::Table(e.to_string()))?;
        let mut buf = Vec::with_capacity(16 + header.len() + self.quantiles.len() * 4 + self.mgf.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for q in &self.quantiles {
            buf.extend_from_slice(&q.to_le_bytes());
        }
        for m in &self.mgf {
            buf.extend_from_slice(&m.to_le_bytes());
        }
        let sum = fnv1a(&buf);
        buf.extend_from_slice(&sum.to_le_bytes());
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() < 24 || &buf[..8] != MAGIC {
            return Err(Error::Table("not a sojourn table file".into()));
        }
        let (body, tail) = buf.split_at(buf.len() - 8);
        if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(Error::Table("checksum mismatch".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != TABLE_VERSION {
            return Err(Error::Table(format!("table version {version}, expected {TABLE_VERSION}")));
        }
        let hlen = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let hdr: TableHeader =
            serde_json::from_slice(body.get(16..16 + hlen).ok_or_else(|| Error::Table("truncated header".into()))?)
                .map_err(|e| Error::Table(e.to_string()))?;
        hdr.spec.validate()?;
        let mut pos = 16 + hlen;
        if body.len() != pos + hdr.quantiles * 4 + hdr.mgf * 8 {
            return Err(Error::Table("payload length mismatch".into()));
        }
        let n = hdr.spec.nodes();
        let expect_q = if hdr.spec.quantile_nodes > 0 { n * (n + 1) / 2 * hdr.spec.quantile_nodes } else { 0 };
        let expect_m = n * n * hdr.spec.mgf_arguments.len();
        if hdr.quantiles != expect_q || hdr.mgf != expect_m {
            return Err(Error::Table("table sizes disagree with grid".into()));
        }
        let mut quantiles = Vec::with_capacity(hdr.quantiles);
        for _ in 0..hdr.quantiles {
            quantiles.push(f32::from_le_bytes(body[pos..pos + 4].try_into().unwrap()));
            pos += 4;
        }
        let mut mgf = Vec::with_capacity(hdr.mgf);
        for _ in 0..hdr.mgf {
            mgf.push(f64::from_le_bytes(body[pos..pos + 8].try_into().unwrap()));
            pos += 8;
        }
        Ok(Self { spec: hdr.spec, quantile_error: hdr.quantile_error, mgf_error: hdr.mgf_error, layer_error: hdr.layer_error, quantiles, mgf })
    }
}

const MAGIC: &[u8; 8] = b"WLSOJTAB";
const TABLE_VERSION: u32 = 2;

#[derive(Serialize, Deserialize)]
struct TableHeader {
    spec: GridSpec,
    quantile_error: f64,
    mgf_error: f64,
    layer_error: Vec<f64>,
    quantiles: usize,
    mgf: usize,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn build_tables(spec: &GridSpec) -> Result<SojournTables> {
    SojournTables::build(spec)
}

/// Draw T_s for `params` from one uniform u in [0, 1).
pub fn sample_sojourn(tables: &SojournTables, params: SojournParams, u: f64) -> Result<f64> {
    let params = SojournParams::new(params.a, params.c, params.t, params.d)?;
    if !(0.0..1.0).contains(&u) {
        return invalid(format!("uniform deviate out of [0,1): {u}"));
    }
    let (alpha, beta) = params.scaled();
    Ok(params.t * tables.sample_scaled(alpha, beta, u))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing() {
        assert_eq!(crossing_probability(0.0, 1.0), 1.0);
        assert!((crossing_probability(1.0, 1.0) - (-2.0f64).exp()).abs() < 1e-15);
        let d = density(SojournParams::new(0.0, 0.0, 1.0, 0.7).unwrap()).unwrap();
        assert!((1.0 - d.atom_at_zero - crossing_probability(0.7, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn mean_at_level_is_half() {
        assert_eq!(mean(SojournParams::new(0.3, 0.3, 2.0, 0.3).unwrap()), 1.0);
    }

    #[test]
    fn branches_at_seams() {
        assert_eq!(branches(1.0, 2.0).len, 1);
        assert_eq!(branches(-1.0, 2.0).len, 1);
        assert_eq!(branches(-1.0, -2.0).len, 1);
        assert_eq!(branches(0.0, 2.0).len, 2);
        assert_eq!(branches(0.0, -2.0).len, 2);
        assert_eq!(branches(0.0, 0.0).len, 3);
    }

    #[test]
    fn mgf_zero_is_one() {
        for &(a, b) in &[(0.5, 0.2), (-0.4, 1.1), (-1.0, -0.3), (0.0, 0.0), (3.0, -3.0)] {
            let m = mgf_scaled(a, b, 0.0, QuadOptions::rel(1e-12)).unwrap();
            assert!((m - 1.0).abs() < 1e-9, "{a} {b} {m}");
        }
    }

    #[test]
    fn stencil_stays_on_one_side() {
        let spec = GridSpec::default();
        let (s, w) = stencil(&spec, 0.05);
        assert_eq!(s, spec.half());
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let (s, _) = stencil(&spec, -0.05);
        assert_eq!(s + 3, spec.half());
    }
}
