//! Sample statistics: `S = Σx`, `V = √(Σx²)`, `σ̂`, Student's `t` and the
//! squared self-normalized sum `u* = (S/V)²`.
//!
//! The two are tied by `t² = (n-1) u* / (n - u*)`, which is equivalent to
//! `t² > x  ⇔  u* > n x / (n + x - 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Statistics of one sample of size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TStatSummary {
    pub n: usize,
    pub sum: f64,
    pub vnorm: f64,
    pub sigma_hat: f64,
    pub t: f64,
    /// `t²`, computed without the rounding of a square root.
    pub t_squared: f64,
    pub u_star: f64,
    /// All observations equal (including all zero).
    pub degenerate_all_equal: bool,
    pub degenerate_all_zero: bool,
}

impl TStatSummary {
    /// `S/V`, taken as 0 when `V = 0`.
    pub fn self_normalized(&self) -> f64 {
        if self.vnorm == 0.0 {
            0.0
        } else {
            self.sum / self.vnorm
        }
    }
}

/// Computes [`TStatSummary`] for `sample`; needs `n >= 2` finite values.
///
/// Equality of observations is exact: near-equal values are not collapsed.
pub fn compute_stats(sample: &[f64]) -> Result<TStatSummary> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "t-statistic undefined for n = {n}; need n >= 2"
        )));
    }
    if let Some(x) = sample.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite observation {x}")));
    }
    // summing in sorted order makes every field exactly permutation invariant
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sample = &sorted[..];
    let nf = n as f64;
    let first = sample[0];
    let all_equal = sample.iter().all(|&x| x == first);
    let all_zero = all_equal && first == 0.0;
    let nonzero = sample.iter().filter(|&&x| x != 0.0).count();

    let sum = compensated_sum(sample.iter().copied());
    let v2 = compensated_sum(sample.iter().map(|x| x * x));
    let vnorm = v2.sqrt();

    let ss = if all_equal { 0.0 } else { centered_sum_of_squares(sample, sum / nf) };
    let sigma_hat = (ss / (nf - 1.0)).sqrt();

    let (u_star, t_squared) = if all_equal || v2 == 0.0 || sum == 0.0 {
        (0.0, 0.0)
    } else {
        let s2 = two_prod(sum, sum);
        let v2_dd = sample.iter().fold(Dd(0.0, 0.0), |acc, &x| acc.add(two_prod(x, x)));
        let ratio = s2.div(v2_dd);
        let (u, t2) = if ratio < (1.0 - 1e-3) * nf {
            // both as one rounding of an exact rational in (S, V²), so exact
            // ties resolve the same way on both sides of the t²/u* equivalence
            let den = v2_dd.scale(nf).add(s2.neg());
            (ratio, s2.scale(nf - 1.0).div(den))
        } else {
            // near u* = n use n - u* = n·SS/V² directly
            let d = nf * ss / v2;
            let u = nf - d;
            (u, (nf - 1.0) * u / d)
        };
        // Cauchy–Schwarz over the nonzero coordinates
        let cap = nonzero as f64;
        if u > cap {
            (cap, (nf - 1.0) * cap / (nf - cap))
        } else {
            (u, t2)
        }
    };
    let t = if t_squared == 0.0 { 0.0 } else { t_squared.sqrt().copysign(sum) };

    Ok(TStatSummary {
        n,
        sum,
        vnorm,
        sigma_hat,
        t,
        t_squared,
        u_star,
        degenerate_all_equal: all_equal,
        degenerate_all_zero: all_zero,
    })
}

/// Unevaluated sum `hi + lo` carrying about 106 bits.
#[derive(Clone, Copy)]
struct Dd(f64, f64);

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd(p, a.mul_add(b, -p))
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd(s, (a - (s - bb)) + (b - bb))
}

impl Dd {
    fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.0, o.0);
        let t = two_sum(self.1, o.1);
        let hi = two_sum(s.0, s.1 + t.0);
        two_sum(hi.0, hi.1 + t.1)
    }

    fn neg(self) -> Dd {
        Dd(-self.0, -self.1)
    }

    fn scale(self, c: f64) -> Dd {
        let p = two_prod(self.0, c);
        two_sum(p.0, p.1 + self.1 * c)
    }

    /// Quotient rounded to f64, refined once against the residual.
    fn div(self, o: Dd) -> f64 {
        let q = self.0 / o.0;
        let r = self.add(o.scale(-q));
        q + (r.0 + r.1) / (o.0 + o.1)
    }
}

fn centered_sum_of_squares(sample: &[f64], mean: f64) -> f64 {
    let ss = compensated_sum(sample.iter().map(|x| (x - mean) * (x - mean)));
    if ss > 0.0 {
        return ss;
    }
    // distinct values whose spread vanished after centering; the pairwise
    // form Σ_{i<j} (x_i - x_j)² / n does not lose it
    let n = sample.len() as f64;
    let mut acc = 0.0;
    for (i, &a) in sample.iter().enumerate() {
        for &b in &sample[i + 1..] {
            acc += (a - b) * (a - b);
        }
    }
    acc / n
}

/// Neumaier summation.
pub(crate) fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `n x / (n + x - 1)`: the `u*` level matching `t² = x`.
pub fn ustar_threshold(n: usize, x: f64) -> f64 {
    let nf = n as f64;
    if x.is_infinite() {
        return nf;
    }
    nf * x / (nf + x - 1.0)
}

/// Inverse of [`ustar_threshold`]: `z (n-1) / (n - z)` for `0 <= z < n`.
pub fn ustar_inverse_threshold(n: usize, z: f64) -> Result<f64> {
    let nf = n as f64;
    if !(0.0..nf).contains(&z) {
        return Err(Error::InvalidArgument(format!("z = {z} outside [0, {n})")));
    }
    Ok(z * (nf - 1.0) / (nf - z))
}
