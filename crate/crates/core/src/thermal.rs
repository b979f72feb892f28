//! Dispersive media at nonzero temperature: Matsubara sums of exponentiated
//! path averages, and their zero-temperature frequency integrals.
//!
//! Renormalization subtracts, mode by mode, the same reference terms as the
//! dispersion-free integrands: the far-interface exponential for CP, and the
//! three-term source-point subtraction for the gap free energy. The atomic
//! polarizability is taken frequency independent.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bridges::{fill_vloop, min_max};
use crate::engine::{
    cp_distance, gap_bounds, interp_frac_above, interp_frac_below, reduce_paths, sample_t, sample_x0,
    trap_frac_above, trap_frac_below, CpMode, Estimator, RunConfig,
};
use crate::error::{invalid, Result};
use crate::media::{gap_touch_time, touch_above, PhysicalConstants};
use crate::quadrature::gauss_laguerre;
use crate::rng::uniform;
use crate::stats::EstimatorAccumulator;

/// Relative tail bound above which a truncated Matsubara sum is flagged.
pub const TAIL_TOLERANCE: f64 = 1e-4;

/// Susceptibility on the imaginary frequency axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DispersionModel {
    Constant { chi0: f64 },
    /// Single undamped oscillator: chi0 omega0^2 / (omega0^2 + s^2).
    Lorentz { chi0: f64, omega0: f64 },
}

impl DispersionModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Constant { chi0 } | Self::Lorentz { chi0, .. } if !(chi0 >= 0.0 && chi0.is_finite()) => {
                invalid("chi0 must be finite and non-negative")
            }
            Self::Lorentz { omega0, .. } if !(omega0 > 0.0) => invalid("omega0 must be positive"),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn chi(&self, s: f64) -> f64 {
        match *self {
            Self::Constant { chi0 } => chi0,
            Self::Lorentz { chi0, omega0 } => {
                if omega0.is_infinite() {
                    chi0
                } else {
                    chi0 * omega0 * omega0 / (omega0 * omega0 + s * s)
                }
            }
        }
    }

    pub fn chi0(&self) -> f64 {
        match *self {
            Self::Constant { chi0 } | Self::Lorentz { chi0, .. } => chi0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalConfig {
    /// Inverse temperature 1/(k_B T).
    pub beta: f64,
    /// Highest Matsubara index kept.
    pub n_max: usize,
    pub constants: PhysicalConstants,
}

impl ThermalConfig {
    /// Keeps modes up to s = 24 c / length, past which e^(-s^2 T/2c^2) is
    /// below e^-30 for every path that reaches an interface at `length`
    /// with a bridge excursion under 3.
    pub fn with_default_modes(beta: f64, length: f64, constants: PhysicalConstants) -> Self {
        let s_cut = 24.0 * constants.c / length;
        let n_max = (s_cut * constants.hbar * beta / (2.0 * PI)).ceil().max(2.0) as usize;
        Self { beta, n_max, constants }
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return invalid("beta must be positive and finite");
        }
        Ok(())
    }
}

/// s_n = 2 pi n / (hbar beta), n = 0..=n_max.
pub fn matsubara_frequencies(tc: &ThermalConfig) -> Vec<f64> {
    (0..=tc.n_max)
        .map(|n| 2.0 * PI * n as f64 / (tc.constants.hbar * tc.beta))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalResult {
    pub value: f64,
    pub std_error: f64,
    /// Mode contributions including the primed-sum half weight on n = 0;
    /// empty for the zero-temperature route.
    pub modes: Vec<f64>,
    /// Geometric estimate of the omitted tail.
    pub truncation_bound: f64,
    /// Set when the tail bound exceeds TAIL_TOLERANCE of |value|.
    pub truncation_warning: bool,
    pub n_paths: u64,
    pub wall_time: f64,
}

fn finish(pref: f64, accs: &[EstimatorAccumulator], n_paths: u64, started: Instant, modal: bool) -> ThermalResult {
    let total = accs[accs.len() - 1];
    let value = pref * total.mean;
    let modes: Vec<f64> = if modal {
        accs[..accs.len() - 1].iter().enumerate().map(|(k, a)| pref * a.mean * if k == 0 { 0.5 } else { 1.0 }).collect()
    } else {
        Vec::new()
    };
    let bound = match modes.as_slice() {
        [] if !modal => 0.0,
        [.., last] if *last == 0.0 => 0.0,
        [.., prev, last] if prev.abs() > last.abs() => {
            let r = last.abs() / prev.abs();
            last.abs() * r / (1.0 - r)
        }
        _ => f64::INFINITY,
    };
    ThermalResult {
        value,
        std_error: pref.abs() * total.std_error(),
        modes,
        truncation_bound: bound,
        truncation_warning: bound > TAIL_TOLERANCE * value.abs(),
        n_paths,
        wall_time: started.elapsed().as_secs_f64(),
    }
}

fn interp(config: &RunConfig) -> Result<bool> {
    match config.estimator {
        Estimator::Trapezoid => Ok(false),
        Estimator::Interpolation => Ok(true),
        e => invalid(format!("thermal sums support trapezoid and interpolation estimators, not {e}")),
    }
}

/// Thermal CP potential of a vacuum-side atom. The profile's own
/// susceptibility is replaced by `dispersion`.
pub fn cp_thermal(config: &RunConfig, dispersion: &DispersionModel, tc: &ThermalConfig) -> Result<ThermalResult> {
    config.validate(&tc.constants)?;
    tc.validate()?;
    dispersion.validate()?;
    let started = Instant::now();
    let d = cp_distance(config, CpMode::Vacuum)?;
    let interp = interp(config)?;
    let k = tc.constants;
    let freqs = matsubara_frequencies(tc);
    let chis: Vec<f64> = freqs.iter().map(|&s| dispersion.chi(s)).collect();
    let m = freqs.len();
    let n = config.n_steps;
    let dim = config.dim;
    let c2 = 2.0 * k.c * k.c;
    let accs = reduce_paths(config.n_paths, config.seed, config.workers, config.reduction, m + 1, |rng, s, out| {
        s.bridge.resize(n + 1, 0.0);
        fill_vloop(&mut s.bridge, rng);
        let (_, hi) = min_max(&s.bridge);
        let t0 = touch_above(d, hi);
        if !t0.is_finite() {
            out.fill(0.0);
            return Ok(());
        }
        let (t, w) = sample_t(t0, dim, uniform(rng));
        let y = d / t.sqrt();
        let f = if interp { interp_frac_above(&s.bridge, y) } else { trap_frac_above(&s.bridge, y) };
        let wt = w * t.powf(1.5);
        let mut total = 0.0;
        for i in 0..m {
            let a = freqs[i] * freqs[i] * t / c2;
            let v = if a == 0.0 { 0.0 } else { freqs[i] * freqs[i] * wt * (-a).exp() * (-a * chis[i] * f).exp_m1() };
            out[i] = v;
            total += if i == 0 { 0.5 * v } else { v };
        }
        out[m] = total;
        Ok(())
    })?;
    let pref = k.alpha0 / (2.0 * (2.0 * PI).powf((dim as f64 - 1.0) / 2.0) * k.eps0 * k.c * k.c * tc.beta);
    Ok(finish(pref, &accs, config.n_paths, started, true))
}

/// Zero-temperature CP potential: the frequency integral on Laguerre nodes
/// in x = s^2 T / 2c^2.
pub fn cp_zero_t(config: &RunConfig, dispersion: &DispersionModel, constants: &PhysicalConstants) -> Result<ThermalResult> {
    config.validate(constants)?;
    dispersion.validate()?;
    let started = Instant::now();
    let d = cp_distance(config, CpMode::Vacuum)?;
    let interp = interp(config)?;
    let k = *constants;
    let (nodes, weights) = gauss_laguerre(config.quadrature_nodes, 0.5);
    let n = config.n_steps;
    let dim = config.dim;
    let accs = reduce_paths(config.n_paths, config.seed, config.workers, config.reduction, 1, |rng, s, out| {
        s.bridge.resize(n + 1, 0.0);
        fill_vloop(&mut s.bridge, rng);
        let (_, hi) = min_max(&s.bridge);
        let t0 = touch_above(d, hi);
        if !t0.is_finite() {
            out[0] = 0.0;
            return Ok(());
        }
        let (t, w) = sample_t(t0, dim, uniform(rng));
        let y = d / t.sqrt();
        let f = if interp { interp_frac_above(&s.bridge, y) } else { trap_frac_above(&s.bridge, y) };
        let mut sum = 0.0;
        for (&x, &wi) in nodes.iter().zip(&weights) {
            let sv = k.c * (2.0 * x / t).sqrt();
            sum += wi * (-x * dispersion.chi(sv) * f).exp_m1();
        }
        out[0] = w * sum;
        Ok(())
    })?;
    let pref = k.hbar * k.alpha0 * 2f64.sqrt() * k.c
        / (2.0 * (2.0 * PI).powf((dim as f64 + 1.0) / 2.0) * k.eps0);
    Ok(finish(pref, &accs, config.n_paths, started, false))
}

/// Per-body path fractions and source indicators for one gap path.
struct GapDraw {
    wx: f64,
    t: f64,
    w: f64,
    f: [f64; 2],
    at0: [bool; 2],
}

fn draw_gap(
    b: &[f64],
    (d1, d2, d0): (f64, f64, f64),
    dim: u32,
    interp: bool,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Option<GapDraw> {
    let (lo, hi) = min_max(b);
    let (x0, wx) = sample_x0(d0, uniform(rng));
    let t0 = gap_touch_time(d1, d2, x0, lo, hi);
    if !t0.is_finite() {
        return None;
    }
    let (t, w) = sample_t(t0, dim, uniform(rng));
    let st = t.sqrt();
    let (l1, l2) = ((d1 - x0) / st, (d2 - x0) / st);
    let f = if interp {
        [interp_frac_below(b, l1), interp_frac_above(b, l2)]
    } else {
        [trap_frac_below(b, l1), trap_frac_above(b, l2)]
    };
    Some(GapDraw { wx, t, w, f, at0: [x0 <= d1, x0 >= d2] })
}

/// Three-term renormalized kernel with each exponential divided by e^-a:
/// [e^-a(e12(x0)-1) - e^-a(<e12>-1)] - [body 1] - [body 2].
#[inline]
fn gap_kernel(a: f64, chi: f64, g: &GapDraw) -> f64 {
    let src = |u: bool| if u { chi } else { 0.0 };
    let (s1, s2) = (src(g.at0[0]), src(g.at0[1]));
    let (p1, p2) = (chi * g.f[0], chi * g.f[1]);
    let e = |x: f64| (-a * x).exp();
    (e(s1 + s2) - e(p1 + p2)) - (e(s1) - e(p1)) - (e(s2) - e(p2))
}

/// Thermal TE free energy per unit area of a gap with both bodies described
/// by `dispersion`.
pub fn free_energy_thermal(config: &RunConfig, dispersion: &DispersionModel, tc: &ThermalConfig) -> Result<ThermalResult> {
    config.validate(&tc.constants)?;
    tc.validate()?;
    dispersion.validate()?;
    let started = Instant::now();
    let gap = gap_bounds(config)?;
    let interp = interp(config)?;
    let k = tc.constants;
    let freqs = matsubara_frequencies(tc);
    let chis: Vec<f64> = freqs.iter().map(|&s| dispersion.chi(s)).collect();
    let m = freqs.len();
    let n = config.n_steps;
    let dim = config.dim;
    let c2 = 2.0 * k.c * k.c;
    let accs = reduce_paths(config.n_paths, config.seed, config.workers, config.reduction, m + 1, |rng, s, out| {
        s.bridge.resize(n + 1, 0.0);
        fill_vloop(&mut s.bridge, rng);
        let Some(g) = draw_gap(&s.bridge, gap, dim, interp, rng) else {
            out.fill(0.0);
            return Ok(());
        };
        let wt = g.wx * g.w * g.t.sqrt();
        let mut total = 0.0;
        for i in 0..m {
            let a = freqs[i] * freqs[i] * g.t / c2;
            let v = if a == 0.0 { 0.0 } else { wt * (-a).exp() * gap_kernel(a, chis[i], &g) };
            out[i] = v;
            total += if i == 0 { 0.5 * v } else { v };
        }
        out[m] = total;
        Ok(())
    })?;
    let pref = 1.0 / ((2.0 * PI).powf((dim as f64 - 1.0) / 2.0) * tc.beta);
    Ok(finish(pref, &accs, config.n_paths, started, true))
}

/// Zero-temperature free energy per unit area: the frequency integral on
/// Laguerre nodes (weight x^-1/2 e^-x) in x = s^2 T / 2c^2.
pub fn free_energy_zero_t(config: &RunConfig, dispersion: &DispersionModel, constants: &PhysicalConstants) -> Result<ThermalResult> {
    config.validate(constants)?;
    dispersion.validate()?;
    let started = Instant::now();
    let gap = gap_bounds(config)?;
    let interp = interp(config)?;
    let k = *constants;
    let (nodes, weights) = gauss_laguerre(config.quadrature_nodes, -0.5);
    let n = config.n_steps;
    let dim = config.dim;
    let accs = reduce_paths(config.n_paths, config.seed, config.workers, config.reduction, 1, |rng, s, out| {
        s.bridge.resize(n + 1, 0.0);
        fill_vloop(&mut s.bridge, rng);
        let Some(g) = draw_gap(&s.bridge, gap, dim, interp, rng) else {
            out[0] = 0.0;
            return Ok(());
        };
        let mut sum = 0.0;
        for (&x, &wi) in nodes.iter().zip(&weights) {
            let sv = k.c * (2.0 * x / g.t).sqrt();
            sum += wi * gap_kernel(x, dispersion.chi(sv), &g);
        }
        out[0] = g.wx * g.w * sum;
        Ok(())
    })?;
    let pref = k.hbar * k.c / (2f64.sqrt() * (2.0 * PI).powf((dim as f64 + 1.0) / 2.0));
    Ok(finish(pref, &accs, config.n_paths, started, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequencies() {
        let tc = ThermalConfig { beta: 2.0, n_max: 3, constants: PhysicalConstants::natural() };
        let s = matsubara_frequencies(&tc);
        assert_eq!(s[0], 0.0);
        assert!((s[1] / s[2] - 0.5).abs() < 1e-15);
        let t2 = ThermalConfig { beta: 4.0, ..tc };
        let h = matsubara_frequencies(&t2);
        for (a, b) in s.iter().zip(&h) {
            assert!((a / 2.0 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn lorentz_is_causal() {
        let m = DispersionModel::Lorentz { chi0: 2.0, omega0: 3.0 };
        assert_eq!(m.chi(0.0), 2.0);
        let mut last = f64::INFINITY;
        for k in 0..50 {
            let c = m.chi(k as f64 * 0.5);
            assert!(c >= 0.0 && c <= last);
            last = c;
        }
    }
}
