//! Monte-Carlo assembly of Casimir-Polder potentials and Casimir energy
//! densities: proper-time and source-point importance sampling, pathwise
//! renormalization and deterministic block reduction.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{casimir_reference, cp_reference, eta_te, eta_te_prime, gamma_te};
use crate::bridges::{fill_vloop, min_max, scale_shift, StandardBridge};
use crate::error::{invalid, Error, Result};
use crate::media::{
    casimir_integrand, frac_above, frac_below, gap_touch_time, inv_pow, touch_above, touch_below,
    DielectricProfile, PhysicalConstants, Susceptibility,
};
use crate::rng::{uniform, RngStreamSpec};
use crate::sojourn::{GridSpec, SojournTables};
use crate::stats::{weighted_loglog_slope, EstimatorAccumulator};

/// Paths per reduction block. Blocks are the unit of work and of ordering.
pub const BLOCK: u64 = 1024;
/// Blocks merged per batch in ordered mode (bounds memory).
const BATCH_BLOCKS: u64 = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Trapezoid,
    Interpolation,
    Dirichlet,
    MgfSegment,
    SojournSample,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Self::Trapezoid,
        Self::Interpolation,
        Self::Dirichlet,
        Self::MgfSegment,
        Self::SojournSample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Trapezoid => "trapezoid",
            Self::Interpolation => "interpolation",
            Self::Dirichlet => "dirichlet",
            Self::MgfSegment => "mgf_segment",
            Self::SojournSample => "sojourn_sample",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|e| e.name() == t)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator '{s}'")))
    }
}

/// Ordered: fixed blocks merged by index, bit-stable under any worker count.
/// Free: rayon reduce, fastest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Ordered,
    Free,
}

impl FromStr for Reduction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ordered" => Ok(Self::Ordered),
            "free" => Ok(Self::Free),
            _ => invalid(format!("unknown reduction '{s}'")),
        }
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ordered => "ordered",
            Self::Free => "free",
        })
    }
}

/// Atom on the vacuum side of the interface, or inside the dielectric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpMode {
    Vacuum,
    Embedded,
}

impl CpMode {
    /// The mode implied by a half-space boundary relative to an atom at 0.
    pub fn from_boundary(boundary: f64) -> Result<Self> {
        if boundary > 0.0 {
            Ok(Self::Vacuum)
        } else if boundary < 0.0 {
            Ok(Self::Embedded)
        } else {
            invalid("atom sits on the interface")
        }
    }
}

fn default_dim() -> u32 {
    4
}
fn default_workers() -> usize {
    1
}
fn default_nodes() -> usize {
    64
}

/// One Monte-Carlo run. The atom (CP runs) sits at the origin; a
/// half-space boundary > 0 puts it in vacuum, < 0 inside the dielectric.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: DielectricProfile,
    #[serde(default = "default_dim")]
    pub dim: u32,
    pub n_steps: usize,
    pub n_paths: u64,
    #[serde(default)]
    pub estimator: Estimator,
    /// Source-point sampling scale for Casimir runs; defaults to the gap width.
    #[serde(default)]
    pub d0: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Susceptibilities evaluated on shared paths; empty means the geometry's own.
    #[serde(default)]
    pub chi_sweep: Vec<Susceptibility>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub reduction: Reduction,
    /// Gauss nodes for the MGF estimator's s-integral.
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
}

impl RunConfig {
    pub fn new(geometry: DielectricProfile, n_steps: usize, n_paths: u64, seed: u64) -> Self {
        Self {
            geometry,
            dim: 4,
            n_steps,
            n_paths,
            estimator: Estimator::Trapezoid,
            d0: None,
            seed,
            chi_sweep: Vec::new(),
            workers: 1,
            reduction: Reduction::Ordered,
            quadrature_nodes: 64,
        }
    }

    pub fn with_estimator(mut self, e: Estimator) -> Self {
        self.estimator = e;
        self
    }

    pub fn with_chis(mut self, chis: &[f64]) -> Result<Self> {
        self.chi_sweep = chis.iter().map(|&c| Susceptibility::new(c)).collect::<Result<_>>()?;
        Ok(self)
    }

    pub fn with_workers(mut self, workers: usize, reduction: Reduction) -> Self {
        self.workers = workers;
        self.reduction = reduction;
        self
    }

    pub fn validate(&self, constants: &PhysicalConstants) -> Result<()> {
        constants.validate()?;
        self.geometry.validate()?;
        if self.n_paths == 0 {
            return invalid("n_paths must be at least 1");
        }
        if self.n_steps == 0 {
            return invalid("n_steps must be at least 1");
        }
        if self.dim < 2 {
            return invalid("dimension must be at least 2");
        }
        if self.dim != constants.dim {
            return invalid(format!("config dim {} differs from constants dim {}", self.dim, constants.dim));
        }
        if let Some(d0) = self.d0 {
            if !(d0 > 0.0 && d0.is_finite()) {
                return invalid("d0 must be positive");
            }
        }
        if self.estimator == Estimator::MgfSegment && self.quadrature_nodes == 0 {
            return invalid("quadrature_nodes must be at least 1");
        }
        Ok(())
    }

    /// Susceptibility pairs evaluated by this run, one per output row.
    pub fn chi_pairs(&self) -> Result<Vec<[Susceptibility; 2]>> {
        let own = match self.geometry {
            DielectricProfile::HalfSpace { chi, .. } => [chi, Susceptibility::Finite(0.0)],
            DielectricProfile::Gap { chi1, chi2, .. } => [chi1, chi2],
            _ => [Susceptibility::Finite(0.0); 2],
        };
        if self.chi_sweep.is_empty() {
            return Ok(vec![own]);
        }
        Ok(self
            .chi_sweep
            .iter()
            .map(|&c| match self.geometry {
                DielectricProfile::Gap { .. } => [c, c],
                _ => [c, Susceptibility::Finite(0.0)],
            })
            .collect())
    }
}

/// One estimate row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub geometry: String,
    pub chi: String,
    #[serde(rename = "N")]
    pub n_steps: usize,
    pub n_paths: u64,
    pub estimator: Estimator,
    pub estimate: f64,
    pub std_error: f64,
    /// Efficiency relative to the perfect-conductor magnitude (D = 4 only).
    pub normalized: Option<f64>,
    pub normalized_std_error: Option<f64>,
    /// Analytic efficiency for the same susceptibilities, when known.
    pub oracle: Option<f64>,
    pub seed: u64,
    pub n_paths_used: u64,
    pub wall_time: f64,
}

impl RunResult {
    /// (normalized - oracle) / normalized_std_error.
    pub fn z_score(&self) -> Option<f64> {
        let (n, o, s) = (self.normalized?, self.oracle?, self.normalized_std_error?);
        Some(if s > 0.0 { (n - o) / s } else if n == o { 0.0 } else { f64::INFINITY })
    }
}

/// Proper time from p(T; T0) = (D/2) T0^(D/2) / T^(1+D/2), T >= T0, by
/// inversion, and the constant weight [(D/2) T0^(D/2)]^-1.
pub fn sample_t(t0: f64, dim: u32, u: f64) -> (f64, f64) {
    let h = dim as f64 / 2.0;
    let t = t0 * (1.0 - u).powf(-1.0 / h);
    (t, 1.0 / (h * t0.powf(h)))
}

/// Source point from p(x; d0) = (3 d0^3/8) min(d0^-4, x^-4) and weight 1/p.
pub fn sample_x0(d0: f64, u: f64) -> (f64, f64) {
    let u = u.max(f64::EPSILON * 0.5);
    let x = if u < 0.125 {
        -d0 / (8.0 * u).cbrt()
    } else if u > 0.875 {
        d0 / (8.0 * (1.0 - u)).cbrt()
    } else {
        -d0 + (u - 0.125) * 8.0 * d0 / 3.0
    };
    (x, 1.0 / x0_density(d0, x))
}

pub fn x0_density(d0: f64, x: f64) -> f64 {
    let a = x.abs();
    if a < d0 {
        3.0 / (8.0 * d0)
    } else {
        3.0 * d0.powi(3) / (8.0 * a.powi(4))
    }
}

/// hbar c alpha0 / (4 (2 pi)^(D/2) eps0).
pub fn cp_prefactor(k: &PhysicalConstants) -> f64 {
    k.hbar * k.c * k.alpha0 / (4.0 * (2.0 * PI).powf(k.dim as f64 / 2.0) * k.eps0)
}

/// hbar c / (2 (2 pi)^(D/2)).
pub fn casimir_prefactor(k: &PhysicalConstants) -> f64 {
    k.hbar * k.c / (2.0 * (2.0 * PI).powf(k.dim as f64 / 2.0))
}

/// Per-path scratch owned by one block.
#[derive(Default)]
pub struct Scratch {
    pub bridge: Vec<f64>,
    pub aux: Vec<f64>,
    pub aux2: Vec<f64>,
}

/// Runs `f` for every path index and reduces its `n_out` values per path.
/// `f` must draw all randomness from the rng it is handed.
pub fn reduce_paths<F>(
    n_paths: u64,
    seed: u64,
    workers: usize,
    reduction: Reduction,
    n_out: usize,
    f: F,
) -> Result<Vec<EstimatorAccumulator>>
where
    F: Fn(&mut ChaCha8Rng, &mut Scratch, &mut [f64]) -> Result<()> + Sync,
{
    let n_blocks = n_paths.div_ceil(BLOCK);
    let block = |b: u64| -> Result<Vec<EstimatorAccumulator>> {
        let mut acc = vec![EstimatorAccumulator::new(); n_out];
        let mut out = vec![0.0; n_out];
        let mut scratch = Scratch::default();
        for i in b * BLOCK..((b + 1) * BLOCK).min(n_paths) {
            let mut rng = RngStreamSpec::new(seed, i).rng();
            f(&mut rng, &mut scratch, &mut out)?;
            for (a, &v) in acc.iter_mut().zip(&out) {
                a.push(v);
            }
        }
        Ok(acc)
    };
    let merge_into = |total: &mut Vec<EstimatorAccumulator>, part: &[EstimatorAccumulator]| {
        for (t, p) in total.iter_mut().zip(part) {
            *t = t.merge(p);
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| match reduction {
        Reduction::Ordered => {
            let mut total = vec![EstimatorAccumulator::new(); n_out];
            let mut start = 0;
            while start < n_blocks {
                let end = (start + BATCH_BLOCKS).min(n_blocks);
                let parts: Vec<Vec<EstimatorAccumulator>> =
                    (start..end).into_par_iter().map(block).collect::<Result<_>>()?;
                for p in &parts {
                    merge_into(&mut total, p);
                }
                start = end;
            }
            Ok(total)
        }
        Reduction::Free => (0..n_blocks)
            .into_par_iter()
            .map(block)
            .try_reduce(
                || vec![EstimatorAccumulator::new(); n_out],
                |mut a, b| {
                    merge_into(&mut a, &b);
                    Ok(a)
                },
            ),
    })
}

/// Fraction of the N trapezoid points (k < N) at or above `level`.
#[inline]
pub fn trap_frac_above(b: &[f64], level: f64) -> f64 {
    let n = b.len() - 1;
    b[..n].iter().filter(|&&x| x >= level).count() as f64 / n as f64
}

#[inline]
pub fn trap_frac_below(b: &[f64], level: f64) -> f64 {
    let n = b.len() - 1;
    b[..n].iter().filter(|&&x| x <= level).count() as f64 / n as f64
}

/// Straight-line fraction of the polygon at or above `level`.
#[inline]
pub fn interp_frac_above(b: &[f64], level: f64) -> f64 {
    let n = b.len() - 1;
    b.windows(2).map(|w| frac_above(w[0], w[1], level)).sum::<f64>() / n as f64
}

#[inline]
pub fn interp_frac_below(b: &[f64], level: f64) -> f64 {
    let n = b.len() - 1;
    b.windows(2).map(|w| frac_below(w[0], w[1], level)).sum::<f64>() / n as f64
}

fn chi_label(p: &[Susceptibility; 2], gap: bool) -> String {
    if gap && p[0] != p[1] {
        format!("{}/{}", p[0], p[1])
    } else {
        p[0].to_string()
    }
}

/// Distance of the atom from the interface and the check that `mode`
/// matches the side it sits on.
pub(crate) fn cp_distance(config: &RunConfig, mode: CpMode) -> Result<f64> {
    let DielectricProfile::HalfSpace { boundary, .. } = config.geometry else {
        return invalid(format!("Casimir-Polder runs need a half-space, got {}", config.geometry.name()));
    };
    if CpMode::from_boundary(boundary)? != mode {
        return invalid(format!(
            "boundary {boundary} puts the atom on the wrong side for {mode:?} mode (vacuum needs > 0, embedded < 0)"
        ));
    }
    Ok(boundary.abs())
}

pub(crate) fn gap_bounds(config: &RunConfig) -> Result<(f64, f64, f64)> {
    let DielectricProfile::Gap { d1, d2, .. } = config.geometry else {
        return invalid(format!("Casimir runs need a gap, got {}", config.geometry.name()));
    };
    let d0 = config.d0.unwrap_or(d2 - d1);
    Ok((d1, d2, d0))
}

/// Builds the result rows for a CP run from per-chi accumulators of the
/// integrand times the proper-time weight.
pub(crate) fn cp_results(
    config: &RunConfig,
    constants: &PhysicalConstants,
    mode: CpMode,
    d: f64,
    pairs: &[[Susceptibility; 2]],
    accs: &[EstimatorAccumulator],
    started: Instant,
) -> Vec<RunResult> {
    let pref = cp_prefactor(constants);
    let wall = started.elapsed().as_secs_f64();
    pairs
        .iter()
        .zip(accs)
        .map(|(p, a)| {
            let estimate = pref * a.mean;
            let se = pref.abs() * a.std_error();
            let (normalized, nse, oracle) = if constants.dim == 4 {
                let r = cp_reference(d, constants);
                let sign = if mode == CpMode::Vacuum { -1.0 } else { 1.0 };
                let chi = p[0].as_f64();
                let o = match mode {
                    CpMode::Vacuum => eta_te(chi),
                    CpMode::Embedded => eta_te_prime(chi),
                };
                (Some(sign * estimate / r), Some(se / r), o.ok().map(|e| e.value))
            } else {
                (None, None, None)
            };
            RunResult {
                geometry: config.geometry.name().into(),
                chi: chi_label(p, false),
                n_steps: config.n_steps,
                n_paths: config.n_paths,
                estimator: config.estimator,
                estimate,
                std_error: se,
                normalized,
                normalized_std_error: nse,
                oracle,
                seed: config.seed,
                n_paths_used: a.count,
                wall_time: wall,
            }
        })
        .collect()
}

pub(crate) fn casimir_results(
    config: &RunConfig,
    constants: &PhysicalConstants,
    pairs: &[[Susceptibility; 2]],
    accs: &[EstimatorAccumulator],
    started: Instant,
) -> Result<Vec<RunResult>> {
    let (d1, d2, _) = gap_bounds(config)?;
    let d = d2 - d1;
    let pref = casimir_prefactor(constants);
    let wall = started.elapsed().as_secs_f64();
    Ok(pairs
        .iter()
        .zip(accs)
        .map(|(p, a)| {
            let estimate = pref * a.mean;
            let se = pref.abs() * a.std_error();
            let (normalized, nse, oracle) = if constants.dim == 4 {
                let r = casimir_reference(d, constants);
                let o = gamma_te(p[0].as_f64(), p[1].as_f64()).ok().map(|e| e.value);
                (Some(-estimate / r), Some(se / r), o)
            } else {
                (None, None, None)
            };
            RunResult {
                geometry: config.geometry.name().into(),
                chi: chi_label(p, true),
                n_steps: config.n_steps,
                n_paths: config.n_paths,
                estimator: config.estimator,
                estimate,
                std_error: se,
                normalized,
                normalized_std_error: nse,
                oracle,
                seed: config.seed,
                n_paths_used: a.count,
                wall_time: wall,
            }
        })
        .collect())
}

/// Casimir-Polder potential of an atom at the origin, one row per
/// susceptibility. Dispatches on the configured estimator.
pub fn estimate_cp(config: &RunConfig, constants: &PhysicalConstants, mode: CpMode) -> Result<Vec<RunResult>> {
    config.validate(constants)?;
    match config.estimator {
        Estimator::Dirichlet => return estimate_cp_dirichlet_closed(config, constants),
        Estimator::MgfSegment => return crate::accelerated::estimate_cp_mgf_segments(config, constants, mode),
        Estimator::SojournSample => {
            return crate::accelerated::estimate_cp_sojourn_sampled(config, constants, mode, None)
        }
        _ => {}
    }
    if let DielectricProfile::UserField(_) = config.geometry {
        return estimate_cp_user(config, constants, mode);
    }
    let started = Instant::now();
    let d = cp_distance(config, mode)?;
    let pairs = config.chi_pairs()?;
    if mode == CpMode::Embedded && pairs.iter().any(|p| p[0].is_dirichlet()) {
        return invalid("an atom cannot sit inside a Dirichlet body");
    }
    let chis: Vec<Susceptibility> = pairs.iter().map(|p| p[0]).collect();
    let base: Vec<f64> = chis
        .iter()
        .map(|&c| match mode {
            CpMode::Vacuum => 1.0,
            CpMode::Embedded => inv_pow(&[(c, 1.0)], 1.5),
        })
        .collect();
    let n = config.n_steps;
    let dim = config.dim;
    let interp = config.estimator == Estimator::Interpolation;
    let accs = reduce_paths(config.n_paths, config.seed, config.workers, config.reduction, chis.len(), |rng, s, out| {
        s.bridge.resize(n + 1, 0.0);
        fill_vloop(&mut s.bridge, rng);
        let (lo, hi) = min_max(&s.bridge);
        let t0 = match mode {
            CpMode::Vacuum => touch_above(d, hi),
            CpMode::Embedded => touch_below(d, lo),
        };
        if !t0.is_finite() {
            out.fill(0.0);
            return Ok(());
        }
        let (t, w) = sample_t(t0, dim, uniform(rng));
        let y = d / t.sqrt();
        let level = if mode == CpMode::Vacuum { y } else { -y };
        let f = if interp {
            interp_frac_above(&s.bridge, level)
        } else {
            trap_frac_above(&s.bridge, level)
        };
        for ((o, &c), &b) in out.iter_mut().zip(&chis).zip(&base) {
            *o = w * (inv_pow(&[(c, f)], 1.5) - b);
        }
        Ok(())
    })?;
    Ok(cp_results(config, constants, mode, d, &pairs, &accs, started))
}

/// General-field CP estimate through the media API, D - 1 bridge axes.
fn estimate_cp_user(config: &RunConfig, constants: &PhysicalConstants, mode: CpMode) -> Result<Vec<RunResult>> {
    let started = Instant::now();
    let geometry = &config.geometry;
    let axes = config.dim as usize - 1;
    let n = config.n_steps;
    let interp = config.estimator == Estimator::Interpolation;
    let src = vec![0.0; axes];
    let accs = reduce_paths(config.n_paths, config.seed, config.workers, config.reduction, 1, |rng, s, out| {
        s.bridge.resize(axes * (n + 1), 0.0);
        for chunk in s.bridge.chunks_mut(n + 1) {
            fill_vloop(chunk, rng);
        }
        let bridge = StandardBridge::from_values(n, axes, std::mem::take(&mut s.bridge))?;
        let t0 = geometry.first_touch_time(&bridge, 0.0)?;
        if !t0.is_finite() {
            out[0] = 0.0;
        } else {
            let (t, w) = sample_t(t0, config.dim, uniform(rng));
            let path = scale_shift(&bridge, &src, t)?;
            out[0] = w * if interp {
                geometry.renorm_integrand_cp_interpolated(&path)?
            } else {
                geometry.renorm_integrand_cp(&path)?
            };
        }
        s.bridge = bridge.values().to_vec();
        Ok(())
    })?;
    let pref = cp_prefactor(constants);
    let a = accs[0];
    let _ = mode;
    Ok(vec![RunResult {
        geometry: geometry.name().into(),
        chi: "field".into(),
        n_steps: n,
        n_paths: config.n_paths,
        estimator: config.estimator,
        estimate: pref * a.mean,
        std_error: pref.abs() * a.std_error(),
        normalized: None,
        normalized_std_error: None,
        oracle: None,
        seed: config.seed,
        n_paths_used: a.count,
        wall_time: started.elapsed().as_secs_f64(),
    }])
}

/// Dirichlet CP (vacuum side) or Casimir energy with the proper-time
/// integral done per path: -(2/D) T0^(-D/2).
pub fn estimate_cp_dirichlet_closed(config: &RunConfig, constants: &PhysicalConstants) -> Result<Vec<RunResult>> {
    config.validate(constants)?;
    let started = Instant::now();
    let pairs = config.chi_pairs()?;
    if pairs.iter().any(|p| !p[0].is_dirichlet()) {
        return invalid("the dirichlet estimator needs infinite susceptibility markers");
    }
    let d = cp_distance(config, CpMode::Vacuum)?;
    let n = config.n_steps;
    let h = config.dim as f64 / 2.0;
    let accs = reduce_paths(config.n_paths, config.seed, config.workers, config.reduction, 1, |rng, s, out| {
        s.bridge.resize(n + 1, 0.0);
        fill_vloop(&mut s.bridge, rng);
        let (_, hi) = min_max(&s.bridge);
        let t0 = touch_above(d, hi);
        out[0] = if t0.is_finite() { -t0.powf(-h) / h } else { 0.0 };
        Ok(())
    })?;
    let accs = vec![accs[0]; pairs.len()];
    Ok(cp_results(config, constants, CpMode::Vacuum, d, &pairs, &accs, started))
}

/// TE Casimir energy per unit area between two half-spaces.
pub fn estimate_casimir(config: &RunConfig, constants: &PhysicalConstants) -> Result<Vec<RunResult>> {
    config.validate(constants)?;
    match config.estimator {
        Estimator::MgfSegment => return crate::accelerated::estimate_casimir_mgf_segments(config, constants),
        Estimator::SojournSample => return crate::accelerated::estimate_casimir_sojourn_sampled(config, constants, None),
        _ => {}
    }
    let started = Instant::now();
    let (d1, d2, d0) = gap_bounds(config)?;
    let pairs = config.chi_pairs()?;
    let closed = config.estimator == Estimator::Dirichlet;
    if closed && pairs.iter().any(|p| !(p[0].is_dirichlet() && p[1].is_dirichlet())) {
        return invalid("the dirichlet estimator needs infinite susceptibility markers");
    }
    let n = config.n_steps;
    let dim = config.dim;
    let h = dim as f64 / 2.0;
    let interp = config.estimator == Estimator::Interpolation;
    let n_out = if closed { 1 } else { pairs.len() };
    let accs = reduce_paths(config.n_paths, config.seed, config.workers, config.reduction, n_out, |rng, s, out| {
        s.bridge.resize(n + 1, 0.0);
        fill_vloop(&mut s.bridge, rng);
        let (lo, hi) = min_max(&s.bridge);
        let (x0, wx) = sample_x0(d0, uniform(rng));
        let t0 = gap_touch_time(d1, d2, x0, lo, hi);
        if !t0.is_finite() {
            out.fill(0.0);
            return Ok(());
        }
        if closed {
            out[0] = -wx * t0.powf(-h) / h;
            return Ok(());
        }
        let (t, wt) = sample_t(t0, dim, uniform(rng));
        let st = t.sqrt();
        let (l1, l2) = ((d1 - x0) / st, (d2 - x0) / st);
        let f = if interp {
            [interp_frac_below(&s.bridge, l1), interp_frac_above(&s.bridge, l2)]
        } else {
            [trap_frac_below(&s.bridge, l1), trap_frac_above(&s.bridge, l2)]
        };
        let at0 = [ind(x0 <= d1), ind(x0 >= d2)];
        for (o, p) in out.iter_mut().zip(&pairs) {
            *o = wx * wt * casimir_integrand(p[0], p[1], f, at0);
        }
        Ok(())
    })?;
    let accs = if closed { vec![accs[0]; pairs.len()] } else { accs };
    casimir_results(config, constants, &pairs, &accs, started)
}

#[inline]
fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Runs the estimator implied by the geometry: CP for half-spaces and user
/// fields, Casimir for gaps.
pub fn run(config: &RunConfig, constants: &PhysicalConstants) -> Result<Vec<RunResult>> {
    match &config.geometry {
        DielectricProfile::Gap { .. } => estimate_casimir(config, constants),
        DielectricProfile::HalfSpace { boundary, .. } => estimate_cp(config, constants, CpMode::from_boundary(*boundary)?),
        DielectricProfile::UserField(_) => estimate_cp(config, constants, CpMode::Vacuum),
        DielectricProfile::Vacuum => invalid("nothing to compute in vacuum"),
    }
}

/// One (chi, estimator, N) point of a convergence sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub chi: String,
    pub estimator: Estimator,
    #[serde(rename = "N")]
    pub n_steps: usize,
    pub n_paths: u64,
    /// Efficiency estimated at this N.
    pub normalized: f64,
    pub normalized_std_error: f64,
    /// Discretization bias relative to the oracle, measured against a
    /// continuum reference on the same paths.
    pub relative_error: f64,
    pub std_error: f64,
    /// normalized / oracle - 1, with its independent-sample error.
    pub direct_relative_error: f64,
    pub direct_std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub chi: String,
    pub estimator: Estimator,
    /// Error-weighted log-log slope of |relative_error| against N.
    pub slope: f64,
    /// Slopes restricted to N < chi and N > chi (finite chi only).
    pub slope_below: Option<f64>,
    pub slope_above: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub oracle: Vec<(String, f64)>,
    pub reference_normalized: Vec<(String, f64, f64)>,
    pub rows: Vec<ConvergenceRow>,
    pub fits: Vec<SlopeFit>,
}

/// Vacuum-side CP error scaling against N. Every path is generated once
/// at the largest N and subsampled for the coarser ones; each coarse
/// estimate is differenced against a continuum reference on the same path
/// (exact conditional touch probability for Dirichlet, per-segment sojourn
/// sampling otherwise), which isolates the discretization bias.
///
/// N values must divide the largest one. Finite chi gets trapezoid and
/// interpolation columns, infinite chi a single dirichlet column.
pub fn convergence_sweep(
    config: &RunConfig,
    constants: &PhysicalConstants,
    n_list: &[usize],
    chi_list: &[Susceptibility],
    tables: Option<&SojournTables>,
) -> Result<ConvergenceTable> {
    config.validate(constants)?;
    if constants.dim != 4 {
        return Err(Error::Unsupported("convergence sweep needs the D = 4 oracle".into()));
    }
    let d = cp_distance(config, CpMode::Vacuum)?;
    if n_list.is_empty() || chi_list.is_empty() {
        return invalid("empty N or chi list");
    }
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let n_max = *ns.last().unwrap();
    if ns[0] == 0 || ns.iter().any(|&k| !n_max.is_multiple_of(k)) {
        return invalid("every N must be positive and divide the largest N");
    }
    let finite = chi_list.iter().any(|c| !c.is_dirichlet());
    let owned;
    let tables = match tables {
        Some(t) => Some(t),
        None if finite => {
            owned = SojournTables::build(&GridSpec::default())?;
            Some(&owned)
        }
        None => None,
    };
    if let Some(t) = tables {
        if finite && !t.has_quantiles() {
            return Err(Error::Table("convergence sweep needs quantile tables".into()));
        }
    }

    // Column layout per chi: [ref, (value, diff) per estimator per N].
    let cols: Vec<Vec<Estimator>> = chi_list
        .iter()
        .map(|c| {
            if c.is_dirichlet() {
                vec![Estimator::Dirichlet]
            } else {
                vec![Estimator::Trapezoid, Estimator::Interpolation]
            }
        })
        .collect();
    let mut offsets = Vec::with_capacity(chi_list.len());
    let mut n_out = 0;
    for c in &cols {
        offsets.push(n_out);
        n_out += 1 + 2 * c.len() * ns.len();
    }
    let dim = config.dim;
    let margin = (40.0 / n_max as f64).sqrt();
    let sqn = (n_max as f64).sqrt();
    let strides: Vec<usize> = ns.iter().map(|&k| n_max / k).collect();

    let accs = reduce_paths(config.n_paths, config.seed, config.workers, config.reduction, n_out, |rng, s, out| {
        let b = &mut s.bridge;
        b.resize(n_max + 1, 0.0);
        fill_vloop(b, rng);
        let (_, hi) = min_max(b);
        let t_low = touch_above(d, hi + margin);
        let (t, w) = sample_t(t_low, dim, uniform(rng));
        let y = d / t.sqrt();

        // Continuum fraction and touch probability on the fine path.
        let mut survive = 1.0;
        let mut f_ref = 0.0;
        for k in 0..n_max {
            let (a, c) = (sqn * (y - b[k]), sqn * (y - b[k + 1]));
            if a <= 0.0 || c <= 0.0 {
                survive = 0.0;
            } else if a * c < 20.0 {
                survive *= -(-2.0 * a * c).exp_m1();
            }
            if finite && (a * c < 20.0 || a <= 0.0 || c <= 0.0) {
                if let Some(tb) = tables {
                    f_ref += tb.sample_scaled(a, c, uniform(rng));
                }
            }
        }
        f_ref /= n_max as f64;
        let touch_ref = 1.0 - survive;

        let mut fr: Vec<[f64; 2]> = Vec::with_capacity(ns.len());
        for &st in &strides {
            let m = n_max / st;
            let (mut ft, mut fi) = (0.0, 0.0);
            for j in 0..m {
                let (p, q) = (b[j * st], b[(j + 1) * st]);
                if p >= y {
                    ft += 1.0;
                }
                fi += frac_above(p, q, y);
            }
            fr.push([ft / m as f64, fi / m as f64]);
        }
        for (ci, chi) in chi_list.iter().enumerate() {
            let o = &mut out[offsets[ci]..];
            if chi.is_dirichlet() {
                let r = -w * touch_ref;
                o[0] = r;
                for (k, f) in fr.iter().enumerate() {
                    let v = if f[0] > 0.0 { -w } else { 0.0 };
                    o[1 + 2 * k] = v;
                    o[2 + 2 * k] = v - r;
                }
            } else {
                let r = w * (inv_pow(&[(*chi, f_ref)], 1.5) - 1.0);
                o[0] = r;
                for (k, f) in fr.iter().enumerate() {
                    for e in 0..2 {
                        let v = w * (inv_pow(&[(*chi, f[e])], 1.5) - 1.0);
                        let at = 1 + 2 * (e * ns.len() + k);
                        o[at] = v;
                        o[at + 1] = v - r;
                    }
                }
            }
        }
        Ok(())
    })?;

    let scale = -cp_prefactor(constants) / cp_reference(d, constants);
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut oracle = Vec::new();
    let mut reference_normalized = Vec::new();
    for (ci, chi) in chi_list.iter().enumerate() {
        let eta = eta_te(chi.as_f64())?.value;
        let label = chi.to_string();
        oracle.push((label.clone(), eta));
        let base = offsets[ci];
        let r = accs[base];
        reference_normalized.push((label.clone(), scale * r.mean, scale.abs() * r.std_error()));
        for (e_idx, &est) in cols[ci].iter().enumerate() {
            let mut errs = Vec::new();
            let mut sigs = Vec::new();
            for (k, &nk) in ns.iter().enumerate() {
                let at = base + 1 + 2 * (e_idx * ns.len() + k);
                let (v, dv) = (accs[at], accs[at + 1]);
                let norm = scale * v.mean;
                let nse = scale.abs() * v.std_error();
                let rel = scale * dv.mean / eta;
                errs.push(rel);
                sigs.push(scale.abs() * dv.std_error() / eta);
                rows.push(ConvergenceRow {
                    chi: label.clone(),
                    estimator: est,
                    n_steps: nk,
                    n_paths: config.n_paths,
                    normalized: norm,
                    normalized_std_error: nse,
                    relative_error: rel,
                    std_error: *sigs.last().unwrap(),
                    direct_relative_error: norm / eta - 1.0,
                    direct_std_error: nse / eta,
                });
            }
            let xs: Vec<f64> = ns.iter().map(|&k| k as f64).collect();
            let split = |keep: &dyn Fn(f64) -> bool| -> Option<f64> {
                let mut sel = (Vec::new(), Vec::new(), Vec::new());
                for ((x, y), s) in xs.iter().zip(&errs).zip(&sigs) {
                    if keep(*x) {
                        sel.0.push(*x);
                        sel.1.push(*y);
                        sel.2.push(*s);
                    }
                }
                (sel.0.len() >= 2).then(|| weighted_loglog_slope(&sel.0, &sel.1, &sel.2))
            };
            let c = chi.as_f64();
            fits.push(SlopeFit {
                chi: label.clone(),
                estimator: est,
                slope: weighted_loglog_slope(&xs, &errs, &sigs),
                slope_below: if c.is_finite() { split(&|x| x < c) } else { None },
                slope_above: if c.is_finite() { split(&|x| x > c) } else { None },
            });
        }
    }
    Ok(ConvergenceTable {
        oracle,
        reference_normalized,
        rows,
        fits,
    })
}

/// Pinned-path average f(0) = int dT (2 pi T)^(-1/2) < exp(-int V) > for the
/// potential V = lambda + chi1 [x < d1] + chi2 [x > d2], by direct simulation.
/// T is drawn from Gamma(1/2, 1/lambda), which absorbs the free kernel, and the
/// occupation fractions use straight-line interpolation on `n_steps` segments.
#[allow(clippy::too_many_arguments)]
pub fn fk_path_average(
    lambda: f64,
    (chi1, d1): (f64, f64),
    (chi2, d2): (f64, f64),
    n_steps: usize,
    n_bridges: u64,
    seed: u64,
    workers: usize,
) -> Result<EstimatorAccumulator> {
    if !(lambda > 0.0) || chi1 < 0.0 || chi2 < 0.0 || n_steps == 0 || n_bridges == 0 {
        return invalid("fk_path_average needs lambda > 0, chi >= 0 and nonempty sampling");
    }
    let gamma = rand_distr::Gamma::new(0.5, 1.0 / lambda).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let norm = 1.0 / (2.0 * lambda).sqrt();
    let acc = reduce_paths(n_bridges, seed, workers, Reduction::Ordered, 1, |rng, sc, out| {
        sc.bridge.resize(n_steps + 1, 0.0);
        fill_vloop(&mut sc.bridge, rng);
        let t: f64 = rand::Rng::sample(rng, gamma);
        let st = t.sqrt();
        let mut occ = 0.0;
        if chi1 > 0.0 {
            occ += chi1 * interp_frac_below(&sc.bridge, d1 / st);
        }
        if chi2 > 0.0 {
            occ += chi2 * interp_frac_above(&sc.bridge, d2 / st);
        }
        out[0] = norm * (-t * occ).exp();
        Ok(())
    })?;
    Ok(acc[0])
}

/// CSV with columns geometry, chi, N, n_paths, estimate, std_error, normalized, seed.
pub fn write_csv<W: Write>(w: W, rows: &[RunResult]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["geometry", "chi", "N", "n_paths", "estimate", "std_error", "normalized", "seed"])
        .map_err(csv_err)?;
    for r in rows {
        wr.write_record([
            r.geometry.clone(),
            r.chi.clone(),
            r.n_steps.to_string(),
            r.n_paths.to_string(),
            format!("{:e}", r.estimate),
            format!("{:e}", r.std_error),
            r.normalized.map(|v| format!("{v:e}")).unwrap_or_default(),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_sampler_examples() {
        assert_eq!(sample_t(1.0, 4, 0.0), (1.0, 0.5));
        let (t, _) = sample_t(3.0, 4, 0.75);
        assert!((t - 6.0).abs() < 1e-14);
    }

    #[test]
    fn x0_sampler_examples() {
        assert_eq!(sample_x0(2.0, 0.5).0, 0.0);
        assert!((sample_x0(1.0, 0.125).0 + 1.0).abs() < 1e-15);
        assert!((sample_x0(1.0, 0.875).0 - 1.0).abs() < 1e-15);
        assert!(sample_x0(1.0, 0.0).0.is_finite());
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert_eq!("mgf-segment".parse::<Estimator>().unwrap(), Estimator::MgfSegment);
    }
}
