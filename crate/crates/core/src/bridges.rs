//! Discrete Brownian bridges and worldline paths.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::rng::RngStreamSpec;

/// Pinned discrete bridge, B_0 = B_N = 0, stored axis-major
/// (`values[axis * (N + 1) + k]`).
#[derive(Clone, Debug, PartialEq)]
pub struct StandardBridge {
    n_steps: usize,
    n_axes: usize,
    values: Vec<f64>,
}

impl StandardBridge {
    pub fn from_values(n_steps: usize, n_axes: usize, values: Vec<f64>) -> Result<Self> {
        if n_steps == 0 || n_axes == 0 {
            return invalid("bridge needs n_steps >= 1 and n_axes >= 1");
        }
        if values.len() != n_axes * (n_steps + 1) {
            return invalid("bridge value count does not match shape");
        }
        for a in 0..n_axes {
            let axis = &values[a * (n_steps + 1)..(a + 1) * (n_steps + 1)];
            if axis[0] != 0.0 || axis[n_steps] != 0.0 {
                return invalid("bridge is not pinned at 0");
            }
        }
        Ok(Self {
            n_steps,
            n_axes,
            values,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_axes(&self) -> usize {
        self.n_axes
    }

    pub fn axis(&self, axis: usize) -> &[f64] {
        let n = self.n_steps + 1;
        &self.values[axis * n..(axis + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Fills `out` (length N + 1) with one v-loop bridge axis:
/// B_k = sqrt(c_k / N) z_k + c_k B_{k-1}, c_k = (N - k)/(N - k + 1).
#[inline]
pub fn fill_vloop<R: Rng + ?Sized>(out: &mut [f64], rng: &mut R) {
    let n = out.len() - 1;
    let nf = n as f64;
    out[0] = 0.0;
    let mut prev = 0.0;
    for k in 1..n {
        let rem = (n - k) as f64;
        let c = rem / (rem + 1.0);
        let z: f64 = rng.sample(StandardNormal);
        prev = (c / nf).sqrt() * z + c * prev;
        out[k] = prev;
    }
    out[n] = 0.0;
}

/// Fills `out` with W_k - (k/N) W_N.
#[inline]
pub fn fill_drift_subtracted<R: Rng + ?Sized>(out: &mut [f64], rng: &mut R) {
    let n = out.len() - 1;
    let scale = 1.0 / (n as f64).sqrt();
    out[0] = 0.0;
    let mut w = 0.0;
    for v in out.iter_mut().skip(1) {
        let z: f64 = rng.sample(StandardNormal);
        w += scale * z;
        *v = w;
    }
    let wn = out[n];
    for (k, v) in out.iter_mut().enumerate() {
        *v -= (k as f64 / n as f64) * wn;
    }
    out[n] = 0.0;
}

fn generate_with(
    n_steps: usize,
    n_axes: usize,
    spec: RngStreamSpec,
    fill: fn(&mut [f64], &mut rand_chacha::ChaCha8Rng),
) -> Result<StandardBridge> {
    if n_steps == 0 {
        return invalid("n_steps must be at least 1");
    }
    if n_axes == 0 {
        return invalid("n_axes must be at least 1");
    }
    let mut rng = spec.rng();
    let mut values = vec![0.0; n_axes * (n_steps + 1)];
    for chunk in values.chunks_mut(n_steps + 1) {
        fill(chunk, &mut rng);
    }
    Ok(StandardBridge {
        n_steps,
        n_axes,
        values,
    })
}

pub fn generate_vloop(n_steps: usize, n_axes: usize, spec: RngStreamSpec) -> Result<StandardBridge> {
    generate_with(n_steps, n_axes, spec, fill_vloop)
}

pub fn generate_drift_subtracted(
    n_steps: usize,
    n_axes: usize,
    spec: RngStreamSpec,
) -> Result<StandardBridge> {
    generate_with(n_steps, n_axes, spec, fill_drift_subtracted)
}

/// x_k = x0 + sqrt(T) B_k.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledPath {
    pub source_point: Vec<f64>,
    pub proper_time: f64,
    pub n_steps: usize,
    pub points: Vec<f64>,
}

impl ScaledPath {
    pub fn axis(&self, axis: usize) -> &[f64] {
        let n = self.n_steps + 1;
        &self.points[axis * n..(axis + 1) * n]
    }

    pub fn n_axes(&self) -> usize {
        self.source_point.len()
    }

    /// Point k as a vector over axes.
    pub fn point(&self, k: usize) -> Vec<f64> {
        (0..self.n_axes())
            .map(|a| self.points[a * (self.n_steps + 1) + k])
            .collect()
    }
}

pub fn scale_shift(bridge: &StandardBridge, x0: &[f64], t: f64) -> Result<ScaledPath> {
    if !(t > 0.0) || !t.is_finite() {
        return invalid(format!("proper time must be positive and finite, got {t}"));
    }
    if x0.len() != bridge.n_axes {
        return invalid("source point dimension does not match bridge axes");
    }
    let st = t.sqrt();
    let n = bridge.n_steps + 1;
    let mut points = Vec::with_capacity(bridge.values.len());
    for (a, &x) in x0.iter().enumerate() {
        points.extend(bridge.values[a * n..(a + 1) * n].iter().map(|b| x + st * b));
    }
    Ok(ScaledPath {
        source_point: x0.to_vec(),
        proper_time: t,
        n_steps: bridge.n_steps,
        points,
    })
}

/// (min_k B_k, max_k B_k) along one axis.
pub fn extremes(bridge: &StandardBridge, axis: usize) -> Result<(f64, f64)> {
    if axis >= bridge.n_axes {
        return invalid(format!("axis {axis} out of range for {} axes", bridge.n_axes));
    }
    Ok(min_max(bridge.axis(axis)))
}

#[inline]
pub fn min_max(xs: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in xs {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}

/// A batch of bridges sharing one shape, with binary persistence.
///
/// Layout, all little-endian: u64 N, u64 n_axes, u64 count, u64 seed,
/// then count * n_axes * (N + 1) f64 values, bridge-major then axis-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeEnsemble {
    pub n_steps: usize,
    pub n_axes: usize,
    pub seed: u64,
    pub bridges: Vec<StandardBridge>,
}

impl BridgeEnsemble {
    pub fn generate(n_steps: usize, n_axes: usize, count: usize, seed: u64) -> Result<Self> {
        let bridges = (0..count as u64)
            .map(|i| generate_vloop(n_steps, n_axes, RngStreamSpec::new(seed, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_steps,
            n_axes,
            seed,
            bridges,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for v in [
            self.n_steps as u64,
            self.n_axes as u64,
            self.bridges.len() as u64,
            self.seed,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for b in &self.bridges {
            for v in &b.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut header = [0u64; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word);
        }
        let [n_steps, n_axes, count, seed] = header.map(|v| v as usize);
        if n_steps == 0 || n_axes == 0 {
            return Err(Error::InvalidArgument("ensemble header has zero shape".into()));
        }
        let per = n_axes * (n_steps + 1);
        let mut bridges = Vec::with_capacity(count);
        for _ in 0..count {
            let mut values = Vec::with_capacity(per);
            for _ in 0..per {
                r.read_exact(&mut word)?;
                values.push(f64::from_le_bytes(word));
            }
            bridges.push(StandardBridge::from_values(n_steps, n_axes, values)?);
        }
        Ok(Self {
            n_steps,
            n_axes,
            seed: seed as u64,
            bridges,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_closes() {
        let b = generate_vloop(1, 1, RngStreamSpec::new(1, 0)).unwrap();
        assert_eq!(b.values(), &[0.0, 0.0]);
        let b = generate_drift_subtracted(1, 1, RngStreamSpec::new(1, 0)).unwrap();
        assert_eq!(b.values(), &[0.0, 0.0]);
        assert_eq!(extremes(&b, 0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(generate_vloop(0, 1, RngStreamSpec::new(1, 0)).is_err());
        assert!(generate_drift_subtracted(0, 1, RngStreamSpec::new(1, 0)).is_err());
    }

    #[test]
    fn extremes_by_inspection() {
        let b = StandardBridge::from_values(3, 1, vec![0.0, 0.3, -0.2, 0.0]).unwrap();
        assert_eq!(extremes(&b, 0).unwrap(), (-0.2, 0.3));
        assert!(extremes(&b, 1).is_err());
    }

    #[test]
    fn scaling() {
        let b = StandardBridge::from_values(3, 1, vec![0.0, 0.7, -0.2, 0.0]).unwrap();
        let p = scale_shift(&b, &[0.0], 1.0).unwrap();
        assert_eq!(p.points, b.values());
        let p = scale_shift(&b, &[0.0], 4.0).unwrap();
        assert_eq!(p.points, vec![0.0, 1.4, -0.4, 0.0]);
        let p = scale_shift(&b, &[0.0], 9.0).unwrap();
        assert!((min_max(&p.points).1 - 2.1).abs() < 1e-15);
        assert!(scale_shift(&b, &[0.0], 0.0).is_err());
        assert!(scale_shift(&b, &[0.0], -1.0).is_err());
    }

    #[test]
    fn ensemble_roundtrip() {
        let e = BridgeEnsemble::generate(8, 2, 5, 42).unwrap();
        let mut buf = Vec::new();
        e.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 5 * 2 * 9 * 8);
        let back = BridgeEnsemble::read_from(&buf[..]).unwrap();
        assert_eq!(back, e);
    }
}
