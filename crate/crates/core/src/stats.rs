//! Mergeable running moments.

use serde::{Deserialize, Serialize};

/// Count, mean and sum of squared deviations, merged with the pairwise
/// (Chan et al.) update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatorAccumulator {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl EstimatorAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut acc = Self::new();
        for &x in xs {
            acc.push(x);
        }
        acc
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Self) -> Self {
        if other.count == 0 {
            return *self;
        }
        if self.count == 0 {
            return *other;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta = other.mean - self.mean;
        Self {
            count: self.count + other.count,
            mean: self.mean + delta * (nb / n),
            m2: self.m2 + other.m2 + delta * delta * (na * nb / n),
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// sqrt(m2 / n) / sqrt(n).
    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        (self.m2 / n).sqrt() / n.sqrt()
    }
}

pub fn merge(a: &EstimatorAccumulator, b: &EstimatorAccumulator) -> EstimatorAccumulator {
    a.merge(b)
}

/// Least-squares slope of log|y| against log x.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && y.abs() > 0.0)
        .map(|(x, y)| (x.ln(), y.abs().ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Slope of log|y| against log x, each point weighted by (y/sigma)^2, the
/// inverse variance of log|y|. Points with y = 0 are dropped.
pub fn weighted_loglog_slope(xs: &[f64], ys: &[f64], sigmas: &[f64]) -> f64 {
    let pts: Vec<(f64, f64, f64)> = xs
        .iter()
        .zip(ys)
        .zip(sigmas)
        .filter(|((x, y), _)| **x > 0.0 && y.abs() > 0.0)
        .map(|((x, y), s)| {
            let w = if *s > 0.0 { (y / s).powi(2) } else { 1e30 };
            (x.ln(), y.abs().ln(), w)
        })
        .collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singletons() {
        let a = EstimatorAccumulator::from_slice(&[1.0]);
        let b = EstimatorAccumulator::from_slice(&[3.0]);
        let m = a.merge(&b);
        assert_eq!(m.count, 2);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.m2, 2.0);
    }

    #[test]
    fn identity() {
        let a = EstimatorAccumulator::from_slice(&[1.0, 2.5, -3.0]);
        assert_eq!(a.merge(&EstimatorAccumulator::new()), a);
        assert_eq!(EstimatorAccumulator::new().merge(&a), a);
    }

    #[test]
    fn slope_of_power_law() {
        let xs: Vec<f64> = (1..8).map(|k| (1 << k) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-1.5)).collect();
        assert!((loglog_slope(&xs, &ys) + 1.5).abs() < 1e-12);
    }
}
