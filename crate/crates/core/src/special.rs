//! Error functions and small numeric helpers.

use std::f64::consts::PI;

pub fn erfc(x: f64) -> f64 {
    statrs::function::erf::erfc(x)
}

pub fn erf(x: f64) -> f64 {
    statrs::function::erf::erf(x)
}

/// Scaled complementary error function exp(x^2) erfc(x).
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        if x < -26.7 {
            return f64::INFINITY;
        }
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 4.0 {
        return (x * x).exp() * erfc(x);
    }
    if x > 1e8 {
        return 1.0 / (PI.sqrt() * x);
    }
    // Laplace continued fraction, evaluated bottom-up.
    let terms = if x < 8.0 { 400 } else { 80 };
    let mut f = x;
    for n in (1..=terms).rev() {
        f = x + 0.5 * n as f64 / f;
    }
    1.0 / (PI.sqrt() * f)
}

/// exp(a) * erfc(x), without intermediate overflow when a and x^2 are both large.
pub fn exp_erfc(a: f64, x: f64) -> f64 {
    if x > 0.0 {
        (a - x * x).exp() * erfcx(x)
    } else {
        a.exp() * erfc(x)
    }
}

/// Polylogarithm Li_4(z) for z in [-1, 1].
pub fn li4(z: f64) -> f64 {
    assert!((-1.0..=1.0).contains(&z));
    if z.abs() <= 0.5 {
        let mut sum = 0.0;
        let mut p = z;
        for k in 1..200 {
            let term = p / (k as f64).powi(4);
            sum += term;
            if term.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
            p *= z;
        }
        return sum;
    }
    if z < 0.0 {
        // Li4(z) + Li4(-z) = Li4(z^2) / 8
        return li4(z * z) / 8.0 - li4(-z);
    }
    if z == 1.0 {
        return PI.powi(4) / 90.0;
    }
    // Expansion about z = 1 in mu = ln z.
    let mu = z.ln();
    let zeta2 = PI * PI / 6.0;
    let zeta3 = 1.202_056_903_159_594_3;
    let zeta4 = PI.powi(4) / 90.0;
    let h3 = 1.0 + 0.5 + 1.0 / 3.0;
    let mut sum = zeta4 + zeta3 * mu + zeta2 * mu * mu / 2.0
        + (h3 - (-mu).ln()) * mu.powi(3) / 6.0;
    // zeta(4 - k) mu^k / k! for k >= 4; zeta at non-positive integers.
    let mut fact = 24.0;
    let mut muk = mu.powi(4);
    for k in 4..40 {
        if k > 4 {
            fact *= k as f64;
            muk *= mu;
        }
        let s = 4 - k;
        let zeta = zeta_nonpositive(s);
        if zeta == 0.0 {
            continue;
        }
        let term = zeta * muk / fact;
        sum += term;
        if term.abs() < 1e-18 {
            break;
        }
    }
    sum
}

fn zeta_nonpositive(s: i32) -> f64 {
    // zeta(-n) = -B_{n+1}/(n+1)
    let n = (-s) as usize;
    if n == 0 {
        return -0.5;
    }
    if n.is_multiple_of(2) {
        return 0.0;
    }
    let b = bernoulli(n + 1);
    -b / (n + 1) as f64
}

fn bernoulli(m: usize) -> f64 {
    let mut a = vec![0.0f64; m + 1];
    let mut out = 0.0;
    for k in 0..=m {
        a[k] = 1.0 / (k as f64 + 1.0);
        for j in (1..=k).rev() {
            a[j - 1] = j as f64 * (a[j - 1] - a[j]);
        }
        out = a[0];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erfcx_matches_direct_form() {
        for &x in &[-3.0, -0.5, 0.0, 0.3, 1.7, 3.9] {
            let direct = (x * x as f64).exp() * erfc(x);
            let rel = (erfcx(x) - direct).abs() / direct;
            assert!(rel < 5e-14, "x={x} rel={rel}");
        }
        let reference = [
            (4.0, 0.136_999_457_625_061_39),
            (4.1, 0.133_834_116_418_652_21),
            (6.0, 0.092_776_567_800_538_354),
            (10.0, 0.056_140_992_743_822_586),
        ];
        for (x, r) in reference {
            let rel = (erfcx(x) - r).abs() / r;
            assert!(rel < 5e-14, "x={x} rel={rel}");
        }
    }

    #[test]
    fn erfcx_large_argument() {
        let x = 1e4;
        let asym = 1.0 / (PI.sqrt() * x) * (1.0 - 0.5 / (x * x));
        assert!((erfcx(x) / asym - 1.0).abs() < 1e-12);
    }

    #[test]
    fn li4_values() {
        assert!((li4(1.0) - PI.powi(4) / 90.0).abs() < 1e-14);
        assert!((li4(-1.0) + 7.0 * PI.powi(4) / 720.0).abs() < 1e-14);
        let direct: f64 = (1..2000).map(|k| 0.9f64.powi(k) / (k as f64).powi(4)).sum();
        assert!((li4(0.9) - direct).abs() < 1e-14);
        let direct: f64 = (1..2000).map(|k| 0.6f64.powi(k) / (k as f64).powi(4)).sum();
        assert!((li4(0.6) - direct).abs() < 1e-14);
    }
}
