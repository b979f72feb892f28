//! Estimators free of finite-N discretization bias for planar interfaces:
//! per-segment sojourn MGFs averaged analytically, or per-segment sojourn
//! times drawn from their exact law.
//!
//! Segments are handled in scaled form, alpha = sqrt(N)(level - B_j), and
//! proper time is drawn from a lower bound that the continuous bridge cannot
//! beat except with probability below e^-80 per segment.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bridges::{fill_vloop, min_max};
use crate::engine::{
    casimir_results, cp_distance, cp_results, gap_bounds, reduce_paths, sample_t, sample_x0, CpMode, RunConfig,
    RunResult,
};
use crate::error::{invalid, Error, Result};
use crate::media::{casimir_integrand, gap_touch_time, inv_pow, touch_above, PhysicalConstants, Susceptibility};
use crate::quadrature::{gauss_laguerre, QuadOptions};
use crate::rng::uniform;
use crate::sojourn::{mgf_scaled, GridSpec, SojournTables};

/// Segments with alpha*beta above this (same sign) never cross: e^-40.
const QUIET: f64 = 20.0;
/// Below this many path-segments a CP run evaluates MGFs directly instead of
/// building a table (a build costs about 15 s).
const TABLE_WORK_THRESHOLD: f64 = 2e6;
/// Gap paths straddle far more often, so tables pay off much sooner.
const GAP_TABLE_WORK_THRESHOLD: f64 = 2e4;

/// One path segment x_j -> x_{j+1} of duration dt against a plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentStatistic {
    pub start: f64,
    pub end: f64,
    pub dt: f64,
    pub boundary: f64,
}

impl SegmentStatistic {
    /// (boundary - start, boundary - end) / sqrt(dt).
    pub fn scaled(&self) -> (f64, f64) {
        let r = self.dt.sqrt();
        ((self.boundary - self.start) / r, (self.boundary - self.end) / r)
    }
}

/// sqrt(40/N): the margin added to the path extremes when bounding the
/// earliest proper time at which a continuous segment can reach a plane.
pub fn touch_margin(n_steps: usize) -> f64 {
    (40.0 / n_steps as f64).sqrt()
}

/// The process-wide inverse-CDF table with default grid, built on first use.
pub fn default_quantile_tables() -> Result<&'static SojournTables> {
    static CELL: OnceLock<std::result::Result<SojournTables, String>> = OnceLock::new();
    CELL.get_or_init(|| SojournTables::build(&GridSpec::default()).map_err(|e| e.to_string()))
        .as_ref()
        .map_err(|e| Error::Table(e.clone()))
}

/// Grid for the MGF layers S_i = u_i chi / N of an n-node Laguerre rule.
pub fn mgf_grid(nodes: &[f64], chi: f64, n_steps: usize) -> GridSpec {
    GridSpec {
        quantile_nodes: 0,
        mgf_arguments: nodes.iter().map(|u| u * chi / n_steps as f64).collect(),
        ..GridSpec::default()
    }
}

/// MGF tables are cached per argument list for the life of the process.
fn cached_mgf_tables(spec: &GridSpec) -> Result<Arc<SojournTables>> {
    static CACHE: OnceLock<Mutex<HashMap<Vec<u64>, Arc<SojournTables>>>> = OnceLock::new();
    let key: Vec<u64> = spec.mgf_arguments.iter().map(|s| s.to_bits()).collect();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(t) = cache.lock().expect("table cache poisoned").get(&key) {
        return Ok(t.clone());
    }
    let t = Arc::new(SojournTables::build(spec)?);
    cache.lock().expect("table cache poisoned").insert(key, t.clone());
    Ok(t)
}

/// How one susceptibility's segment MGFs are produced.
enum Layers {
    /// chi = 0: every MGF is one.
    Zero,
    /// Infinite chi: the MGF is the no-touch probability at every node.
    Dirichlet,
    Finite {
        args: Vec<f64>,
        tables: Option<Arc<SojournTables>>,
    },
}

impl Layers {
    fn new(chi: Susceptibility, nodes: &[f64], n_steps: usize, use_tables: bool) -> Result<Self> {
        Ok(match chi {
            Susceptibility::Dirichlet => Self::Dirichlet,
            Susceptibility::Finite(c) if c == 0.0 => Self::Zero,
            Susceptibility::Finite(c) => {
                let spec = mgf_grid(nodes, c, n_steps);
                let tables = if use_tables { Some(cached_mgf_tables(&spec)?) } else { None };
                Self::Finite {
                    args: spec.mgf_arguments,
                    tables,
                }
            }
        })
    }

    /// Multiplies `prod` by the MGFs of every segment of `b` against the
    /// scaled `level`; `below` measures time below the level instead.
    fn accumulate(&self, b: &[f64], sqn: f64, level: f64, below: bool, prod: &mut [f64], tmp: &mut Vec<f64>) -> Result<()> {
        self.accumulate_where(b, sqn, level, below, prod, tmp, |_| true)
    }

    #[allow(clippy::too_many_arguments)]
    fn accumulate_where(
        &self,
        b: &[f64],
        sqn: f64,
        level: f64,
        below: bool,
        prod: &mut [f64],
        tmp: &mut Vec<f64>,
        keep: impl Fn(usize) -> bool,
    ) -> Result<()> {
        let sgn = if below { -1.0 } else { 1.0 };
        let mut deep = 0usize;
        let mut no_touch = 1.0;
        tmp.resize(prod.len(), 0.0);
        for j in 0..b.len() - 1 {
            if !keep(j) {
                continue;
            }
            let (a, c) = (sgn * sqn * (level - b[j]), sgn * sqn * (level - b[j + 1]));
            if a > 0.0 && c > 0.0 && a * c >= QUIET {
                continue;
            }
            match self {
                Self::Zero => return Ok(()),
                Self::Dirichlet => {
                    no_touch *= if a > 0.0 && c > 0.0 { -(-2.0 * a * c).exp_m1() } else { 0.0 };
                }
                Self::Finite { args, tables } => {
                    if a < 0.0 && c < 0.0 && a * c >= QUIET {
                        deep += 1;
                        continue;
                    }
                    match tables {
                        Some(t) => t.segment_mgf(a, c, tmp)?,
                        None => {
                            let opts = QuadOptions::rel(1e-10).with_abs(1e-12);
                            for (o, &s) in tmp.iter_mut().zip(args) {
                                *o = mgf_scaled(a, c, s, opts)?;
                            }
                        }
                    }
                    for (p, m) in prod.iter_mut().zip(tmp.iter()) {
                        *p *= m;
                    }
                }
            }
        }
        match self {
            Self::Dirichlet => prod.iter_mut().for_each(|p| *p *= no_touch),
            Self::Finite { args, .. } if deep > 0 => {
                for (p, s) in prod.iter_mut().zip(args) {
                    *p *= (-s * deep as f64).exp();
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn use_tables(config: &RunConfig, threshold: f64) -> bool {
    config.n_paths as f64 * config.n_steps as f64 >= threshold
}

/// CP potential from the segment-MGF representation
/// <eps>^-3/2 = (2/sqrt(pi)) int du u^1/2 e^-u E[exp(-u chi f)],
/// with the u-integral on generalized Gauss-Laguerre nodes.
pub fn estimate_cp_mgf_segments(
    config: &RunConfig,
    constants: &PhysicalConstants,
    mode: CpMode,
) -> Result<Vec<RunResult>> {
    config.validate(constants)?;
    let started = Instant::now();
    let d = cp_distance(config, mode)?;
    let pairs = config.chi_pairs()?;
    if mode == CpMode::Embedded && pairs.iter().any(|p| p[0].is_dirichlet()) {
        return invalid("an atom cannot sit inside a Dirichlet body");
    }
    let (nodes, weights) = gauss_laguerre(config.quadrature_nodes, 0.5);
    let tabled = use_tables(config, TABLE_WORK_THRESHOLD);
    let layers: Vec<Layers> = pairs
        .iter()
        .map(|p| Layers::new(p[0], &nodes, config.n_steps, tabled))
        .collect::<Result<_>>()?;
    let c = 2.0 / PI.sqrt();
    // Quadrature image of the subtracted source term, so that paths which
    // never reach the interface contribute exactly zero.
    let base: Vec<f64> = pairs
        .iter()
        .map(|p| match (mode, p[0]) {
            (CpMode::Vacuum, _) => 1.0,
            (CpMode::Embedded, Susceptibility::Finite(x)) => {
                c * nodes.iter().zip(&weights).map(|(u, w)| w * (-u * x).exp()).sum::<f64>()
            }
            (CpMode::Embedded, Susceptibility::Dirichlet) => 0.0,
        })
        .collect();
    let n = config.n_steps;
    let dim = config.dim;
    let sqn = (n as f64).sqrt();
    let margin = touch_margin(n);
    let accs = reduce_paths(config.n_paths, config.seed, config.workers, config.reduction, pairs.len(), |rng, s, out| {
        s.bridge.resize(n + 1, 0.0);
        fill_vloop(&mut s.bridge, rng);
        let (lo, hi) = min_max(&s.bridge);
        let t_low = match mode {
            CpMode::Vacuum => touch_above(d, hi + margin),
            CpMode::Embedded => touch_above(d, margin - lo),
        };
        let (t, w) = sample_t(t_low, dim, uniform(rng));
        let y = d / t.sqrt();
        let level = if mode == CpMode::Vacuum { y } else { -y };
        for ((o, layer), &b0) in out.iter_mut().zip(&layers).zip(&base) {
            if let Layers::Zero = layer {
                *o = 0.0;
                continue;
            }
            s.aux.clear();
            s.aux.resize(nodes.len(), 1.0);
            layer.accumulate(&s.bridge, sqn, level, false, &mut s.aux, &mut s.aux2)?;
            let avg = if let Layers::Dirichlet = layer {
                s.aux[0]
            } else {
                let mut acc = 0.0;
                let (mut sa, mut sb) = (0.0, 0.0);
                for (wi, &p) in weights.iter().zip(&s.aux) {
                    sa += wi * p;
                    sb += wi;
                }
                acc += c * sa;
                if mode == CpMode::Vacuum {
                    acc -= c * sb - 1.0;
                }
                acc
            };
            *o = w * (avg - b0);
        }
        Ok(())
    })?;
    let mut rows = cp_results(config, constants, mode, d, &pairs, &accs, started);
    rows.iter_mut().for_each(|r| r.estimator = crate::engine::Estimator::MgfSegment);
    Ok(rows)
}

/// Sojourn fraction of one scaled segment; draws a uniform only when the
/// outcome is genuinely random.
#[inline]
fn segment_fraction(tables: &SojournTables, a: f64, c: f64, rng: &mut ChaCha8Rng) -> f64 {
    if a > 0.0 && c > 0.0 && a * c >= QUIET {
        0.0
    } else if a < 0.0 && c < 0.0 && a * c >= QUIET {
        1.0
    } else {
        tables.sample_scaled(a, c, uniform(rng))
    }
}

/// CP potential with each segment's time in the dielectric drawn from the
/// exact pinned-segment law. One draw per path serves every chi.
pub fn estimate_cp_sojourn_sampled(
    config: &RunConfig,
    constants: &PhysicalConstants,
    mode: CpMode,
    tables: Option<&SojournTables>,
) -> Result<Vec<RunResult>> {
    config.validate(constants)?;
    let started = Instant::now();
    let d = cp_distance(config, mode)?;
    let pairs = config.chi_pairs()?;
    if mode == CpMode::Embedded && pairs.iter().any(|p| p[0].is_dirichlet()) {
        return invalid("an atom cannot sit inside a Dirichlet body");
    }
    let tables = match tables {
        Some(t) => t,
        None => default_quantile_tables()?,
    };
    if !tables.has_quantiles() {
        return Err(Error::Table("sojourn sampling needs quantile tables".into()));
    }
    let base: Vec<f64> = pairs
        .iter()
        .map(|p| match mode {
            CpMode::Vacuum => 1.0,
            CpMode::Embedded => inv_pow(&[(p[0], 1.0)], 1.5),
        })
        .collect();
    let n = config.n_steps;
    let dim = config.dim;
    let sqn = (n as f64).sqrt();
    let margin = touch_margin(n);
    let accs = reduce_paths(config.n_paths, config.seed, config.workers, config.reduction, pairs.len(), |rng, s, out| {
        s.bridge.resize(n + 1, 0.0);
        fill_vloop(&mut s.bridge, rng);
        let (lo, hi) = min_max(&s.bridge);
        let t_low = match mode {
            CpMode::Vacuum => touch_above(d, hi + margin),
            CpMode::Embedded => touch_above(d, margin - lo),
        };
        let (t, w) = sample_t(t_low, dim, uniform(rng));
        let y = d / t.sqrt();
        let level = if mode == CpMode::Vacuum { y } else { -y };
        let b = &s.bridge;
        let mut f = 0.0;
        for j in 0..n {
            f += segment_fraction(tables, sqn * (level - b[j]), sqn * (level - b[j + 1]), rng);
        }
        f /= n as f64;
        for ((o, p), &b0) in out.iter_mut().zip(&pairs).zip(&base) {
            *o = w * (inv_pow(&[(p[0], f)], 1.5) - b0);
        }
        Ok(())
    })?;
    let mut rows = cp_results(config, constants, mode, d, &pairs, &accs, started);
    rows.iter_mut().for_each(|r| r.estimator = crate::engine::Estimator::SojournSample);
    Ok(rows)
}

/// Segment j belongs to body 1 when its midpoint is nearer interface 1.
#[inline]
fn nearer_first(b: &[f64], j: usize, l1: f64, l2: f64) -> bool {
    let m = 0.5 * (b[j] + b[j + 1]);
    (m - l1).abs() <= (l2 - m).abs()
}

fn gap_t_low(d1: f64, d2: f64, x0: f64, lo: f64, hi: f64, margin: f64) -> f64 {
    gap_touch_time(d1, d2, x0, lo - margin, hi + margin)
}

/// Casimir energy with segment MGFs, each segment charged to its nearest
/// interface. Approximate for a gap: exact only as sqrt(T/N) << gap.
pub fn estimate_casimir_mgf_segments(config: &RunConfig, constants: &PhysicalConstants) -> Result<Vec<RunResult>> {
    config.validate(constants)?;
    let started = Instant::now();
    let (d1, d2, d0) = gap_bounds(config)?;
    let pairs = config.chi_pairs()?;
    let (nodes, weights) = gauss_laguerre(config.quadrature_nodes, -0.5);
    let tabled = use_tables(config, GAP_TABLE_WORK_THRESHOLD);
    let layers: Vec<[Layers; 2]> = pairs
        .iter()
        .map(|p| {
            Ok([
                Layers::new(p[0], &nodes, config.n_steps, tabled)?,
                Layers::new(p[1], &nodes, config.n_steps, tabled)?,
            ])
        })
        .collect::<Result<_>>()?;
    let c = 1.0 / PI.sqrt();
    let n = config.n_steps;
    let dim = config.dim;
    let sqn = (n as f64).sqrt();
    let margin = touch_margin(n);
    let m = nodes.len();
    let accs = reduce_paths(config.n_paths, config.seed, config.workers, config.reduction, pairs.len(), |rng, s, out| {
        s.bridge.resize(n + 1, 0.0);
        fill_vloop(&mut s.bridge, rng);
        let (lo, hi) = min_max(&s.bridge);
        let (x0, wx) = sample_x0(d0, uniform(rng));
        let t_low = gap_t_low(d1, d2, x0, lo, hi, margin);
        if !t_low.is_finite() {
            out.fill(0.0);
            return Ok(());
        }
        let (t, wt) = sample_t(t_low, dim, uniform(rng));
        let st = t.sqrt();
        let (l1, l2) = ((d1 - x0) / st, (d2 - x0) / st);
        let at0 = [x0 <= d1, x0 >= d2];
        let b = &s.bridge;
        for ((o, p), ly) in out.iter_mut().zip(&pairs).zip(&layers) {
            let mut prods = [vec![1.0; m], vec![1.0; m]];
            ly[0].accumulate_where(b, sqn, l1, true, &mut prods[0], &mut s.aux2, |j| nearer_first(b, j, l1, l2))?;
            ly[1].accumulate_where(b, sqn, l2, false, &mut prods[1], &mut s.aux2, |j| !nearer_first(b, j, l1, l2))?;
            let src = |chi: Susceptibility, inside: bool, u: f64| -> f64 {
                if !inside {
                    return 1.0;
                }
                match chi {
                    Susceptibility::Finite(x) => (-u * x).exp(),
                    Susceptibility::Dirichlet => 0.0,
                }
            };
            let mut sum = 0.0;
            for i in 0..m {
                let (s1, s2) = (src(p[0], at0[0], nodes[i]), src(p[1], at0[1], nodes[i]));
                let (p1, p2) = (prods[0][i], prods[1][i]);
                sum += weights[i] * ((s1 * s2 - s1 - s2) - (p1 * p2 - p1 - p2));
            }
            *o = wx * wt * c * sum;
        }
        Ok(())
    })?;
    let mut rows = casimir_results(config, constants, &pairs, &accs, started)?;
    rows.iter_mut().for_each(|r| r.estimator = crate::engine::Estimator::MgfSegment);
    Ok(rows)
}

/// Casimir energy with sojourn-sampled per-body fractions, nearest-interface rule.
pub fn estimate_casimir_sojourn_sampled(
    config: &RunConfig,
    constants: &PhysicalConstants,
    tables: Option<&SojournTables>,
) -> Result<Vec<RunResult>> {
    config.validate(constants)?;
    let started = Instant::now();
    let (d1, d2, d0) = gap_bounds(config)?;
    let pairs = config.chi_pairs()?;
    let tables = match tables {
        Some(t) => t,
        None => default_quantile_tables()?,
    };
    if !tables.has_quantiles() {
        return Err(Error::Table("sojourn sampling needs quantile tables".into()));
    }
    let n = config.n_steps;
    let dim = config.dim;
    let sqn = (n as f64).sqrt();
    let margin = touch_margin(n);
    let accs = reduce_paths(config.n_paths, config.seed, config.workers, config.reduction, pairs.len(), |rng, s, out| {
        s.bridge.resize(n + 1, 0.0);
        fill_vloop(&mut s.bridge, rng);
        let (lo, hi) = min_max(&s.bridge);
        let (x0, wx) = sample_x0(d0, uniform(rng));
        let t_low = gap_t_low(d1, d2, x0, lo, hi, margin);
        if !t_low.is_finite() {
            out.fill(0.0);
            return Ok(());
        }
        let (t, wt) = sample_t(t_low, dim, uniform(rng));
        let st = t.sqrt();
        let (l1, l2) = ((d1 - x0) / st, (d2 - x0) / st);
        let b = &s.bridge;
        let mut f = [0.0; 2];
        for j in 0..n {
            if nearer_first(b, j, l1, l2) {
                f[0] += segment_fraction(tables, -sqn * (l1 - b[j]), -sqn * (l1 - b[j + 1]), rng);
            } else {
                f[1] += segment_fraction(tables, sqn * (l2 - b[j]), sqn * (l2 - b[j + 1]), rng);
            }
        }
        let f = [f[0] / n as f64, f[1] / n as f64];
        let at0 = [if x0 <= d1 { 1.0 } else { 0.0 }, if x0 >= d2 { 1.0 } else { 0.0 }];
        for (o, p) in out.iter_mut().zip(&pairs) {
            *o = wx * wt * casimir_integrand(p[0], p[1], f, at0);
        }
        Ok(())
    })?;
    let mut rows = casimir_results(config, constants, &pairs, &accs, started)?;
    rows.iter_mut().for_each(|r| r.estimator = crate::engine::Estimator::SojournSample);
    Ok(rows)
}
