//! Exact expectations for finite-support discrete laws.
//!
//! `E|T_n|^r` is a finite sum over samples. Since `T_n` is symmetric in its
//! arguments it suffices to visit each multiset of atoms once, weighted by
//! its multinomial probability.
//!
//! The three equivalent finiteness conditions are also computed here:
//!
//! ```text
//! (ii)  E[ |X₁|^r / max_{i≥2} |X_i - X₁|^r ;  not all X_i = X₁ ]
//! (iii) Σ_{x≠0} p_x ∫₀^upper h^-(r+1) (G_x(h)^(n-1) - p_x^(n-1)) dh,
//!       G_x(h) = P(|X - x| < h|x|)
//! R_{n,δ} = n^r · (iii with upper = δ)
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::DistributionSpec;
use crate::error::{Error, Result};
use crate::extended::Extended;
use crate::selfnorm::compute_stats;
use crate::survival::StepSurvival;

/// Largest number of multisets an exact computation may visit.
pub const ENUMERATION_BUDGET: u128 = 10_000_000;
/// Largest sample size accepted by the enumerators.
pub const MAX_EXACT_N: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactMomentResult {
    pub n: usize,
    pub r: f64,
    pub value: f64,
    /// Distinct multisets enumerated, `C(atoms + n - 1, n)`.
    pub tuple_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    CondIi,
    CondIii,
    RDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionValue {
    pub which: ConditionKind,
    pub n: usize,
    pub r: f64,
    /// Upper limit of the `h` integral; absent for condition (ii).
    pub delta: Option<f64>,
    pub value: Extended,
}

/// `C(m + n - 1, n)`, saturating.
pub fn multiset_count(m: usize, n: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 1..=n as u128 {
        // C(m-1+i, i) = C(m-2+i, i-1) (m-1+i) / i stays integral at each step
        c = match c.checked_mul(m as u128 - 1 + i) {
            Some(v) => v / i,
            None => return u128::MAX,
        };
    }
    c
}

fn finite_atoms(dist: &DistributionSpec) -> Result<Vec<(f64, f64)>> {
    dist.finite_atoms()
        .ok_or_else(|| Error::Inapplicable("exact computation needs a finite-support discrete law".into()))
}

fn check_n(n: usize) -> Result<()> {
    if !(2..=MAX_EXACT_N).contains(&n) {
        return Err(Error::InvalidArgument(format!("exact enumeration needs 2 <= n <= {MAX_EXACT_N}, got {n}")));
    }
    Ok(())
}

fn check_r(r: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("moment order must be finite and > 0, got {r}")));
    }
    Ok(())
}

fn check_budget(m: usize, n: usize) -> Result<u128> {
    let needed = multiset_count(m, n);
    if needed > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded { needed, budget: ENUMERATION_BUDGET });
    }
    Ok(needed)
}

/// Sums `f(counts) * P(counts)` over all multisets of size `k` drawn from
/// atoms with probabilities `probs`, where `P` is the multinomial law.
/// Work is split by the count of the first atom; partial sums are added
/// in that fixed order.
fn multiset_sum<F>(probs: &[f64], k: usize, f: F) -> f64
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    let m = probs.len();
    let mut fact = vec![1.0f64; k + 1];
    for i in 1..=k {
        fact[i] = fact[i - 1] * i as f64;
    }
    let powers: Vec<Vec<f64>> = probs
        .iter()
        .map(|&p| (0..=k).map(|c| p.powi(c as i32)).collect())
        .collect();
    let partials: Vec<f64> = (0..=k)
        .into_par_iter()
        .map(|first| {
            let mut counts = vec![0usize; m];
            counts[0] = first;
            let mut acc = 0.0;
            let base = powers[0][first] / fact[first];
            if m == 1 {
                if first == k {
                    acc += fact[k] * base * f(&counts);
                }
                return acc;
            }
            fill(&mut counts, 1, k - first, base, &powers, &fact, k, &f, &mut acc);
            acc
        })
        .collect();
    partials.iter().sum()
}

#[allow(clippy::too_many_arguments)]
fn fill<F: Fn(&[usize]) -> f64>(
    counts: &mut [usize],
    pos: usize,
    left: usize,
    weight: f64,
    powers: &[Vec<f64>],
    fact: &[f64],
    k: usize,
    f: &F,
    acc: &mut f64,
) {
    let m = counts.len();
    if pos == m - 1 {
        counts[pos] = left;
        let w = fact[k] * weight * powers[pos][left] / fact[left];
        if w > 0.0 {
            *acc += w * f(counts);
        }
        counts[pos] = 0;
        return;
    }
    for c in 0..=left {
        counts[pos] = c;
        let w = weight * powers[pos][c] / fact[c];
        fill(counts, pos + 1, left - c, w, powers, fact, k, f, acc);
    }
    counts[pos] = 0;
}

fn expand(points: &[f64], counts: &[usize]) -> Vec<f64> {
    points
        .iter()
        .zip(counts)
        .flat_map(|(&x, &c)| std::iter::repeat_n(x, c))
        .collect()
}

/// `E|T_n|^r` by multiset enumeration.
pub fn exact_tmoment(dist: &DistributionSpec, n: usize, r: f64) -> Result<ExactMomentResult> {
    check_n(n)?;
    check_r(r)?;
    let atoms = finite_atoms(dist)?;
    let count = check_budget(atoms.len(), n)?;
    let points: Vec<f64> = atoms.iter().map(|a| a.0).collect();
    let probs: Vec<f64> = atoms.iter().map(|a| a.1).collect();
    let value = multiset_sum(&probs, n, |counts| {
        let s = compute_stats(&expand(&points, counts)).expect("n >= 2 finite sample");
        s.t_squared.powf(0.5 * r)
    });
    Ok(ExactMomentResult { n, r, value, tuple_count: count as u64 })
}

/// Exact law of `U*` as a step survival function.
pub fn exact_ustar_distribution(dist: &DistributionSpec, n: usize) -> Result<StepSurvival> {
    check_n(n)?;
    let atoms = finite_atoms(dist)?;
    check_budget(atoms.len(), n)?;
    let points: Vec<f64> = atoms.iter().map(|a| a.0).collect();
    let probs: Vec<f64> = atoms.iter().map(|a| a.1).collect();
    let mut fact = vec![1.0f64; n + 1];
    for i in 1..=n {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut masses = Vec::new();
    let mut counts = vec![0usize; atoms.len()];
    collect_masses(&mut counts, 0, n, &points, &probs, &fact, &mut masses);
    Ok(StepSurvival::new(n, masses))
}

fn collect_masses(
    counts: &mut [usize],
    pos: usize,
    left: usize,
    points: &[f64],
    probs: &[f64],
    fact: &[f64],
    out: &mut Vec<(f64, f64)>,
) {
    if pos == counts.len() - 1 {
        counts[pos] = left;
        let n: usize = counts.iter().sum();
        let w = counts
            .iter()
            .zip(probs)
            .fold(fact[n], |w, (&c, &p)| w * p.powi(c as i32) / fact[c]);
        let s = compute_stats(&expand(points, counts)).expect("n >= 2 finite sample");
        out.push((s.u_star, w));
        counts[pos] = 0;
        return;
    }
    for c in 0..=left {
        counts[pos] = c;
        collect_masses(counts, pos + 1, left - c, points, probs, fact, out);
    }
    counts[pos] = 0;
}

/// Condition (ii) by enumeration over `X₁` and the multiset of the rest.
pub fn exact_condition_ii(dist: &DistributionSpec, n: usize, r: f64) -> Result<ConditionValue> {
    check_n(n)?;
    check_r(r)?;
    let atoms = finite_atoms(dist)?;
    check_budget(atoms.len(), n)?;
    let points: Vec<f64> = atoms.iter().map(|a| a.0).collect();
    let probs: Vec<f64> = atoms.iter().map(|a| a.1).collect();
    let mut total = 0.0;
    for (j, (&x1, &p1)) in points.iter().zip(&probs).enumerate() {
        if x1 == 0.0 {
            continue;
        }
        let inner = multiset_sum(&probs, n - 1, |counts| {
            // coordinates equal to X₁ never attain the maximum distance
            let spread = counts
                .iter()
                .zip(&points)
                .filter(|(&c, _)| c > 0)
                .map(|(_, &x)| (x - x1).abs())
                .fold(0.0f64, f64::max);
            if counts[j] == n - 1 || spread == 0.0 {
                0.0
            } else {
                (x1.abs() / spread).powf(r)
            }
        });
        total += p1 * inner;
    }
    Ok(ConditionValue { which: ConditionKind::CondIi, n, r, delta: None, value: Extended::Finite(total) })
}

/// Condition (iii) in closed form, piecewise over the jumps of `G_x`.
/// `upper` may be `f64::INFINITY`.
pub fn exact_condition_iii(dist: &DistributionSpec, n: usize, r: f64, upper: f64) -> Result<ConditionValue> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    check_r(r)?;
    if !(upper > 0.0) {
        return Err(Error::InvalidArgument(format!("upper limit must be > 0, got {upper}")));
    }
    let atoms = finite_atoms(dist)?;
    let value = condition_iii_sum(&atoms, n, r, upper);
    Ok(ConditionValue {
        which: ConditionKind::CondIii,
        n,
        r,
        delta: Some(upper),
        value: Extended::Finite(value),
    })
}

fn condition_iii_sum(atoms: &[(f64, f64)], n: usize, r: f64, upper: f64) -> f64 {
    let e = (n - 1) as i32;
    // ∫_lo^hi h^-(r+1) dh
    let piece = |lo: f64, hi: f64| {
        let hi_term = if hi.is_infinite() { 0.0 } else { hi.powf(-r) };
        (lo.powf(-r) - hi_term) / r
    };
    let mut total = 0.0;
    for &(xj, pj) in atoms {
        if xj == 0.0 {
            continue;
        }
        let mut gaps: Vec<(f64, f64)> = atoms
            .iter()
            .filter(|a| a.0 != xj)
            .map(|&(xk, pk)| ((xk - xj).abs() / xj.abs(), pk))
            .collect();
        gaps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let base = pj.powi(e);
        let mut g = pj;
        let mut inner = 0.0;
        let mut i = 0;
        while i < gaps.len() {
            let lo = gaps[i].0;
            if lo >= upper {
                break;
            }
            // G jumps once h passes every atom at this relative distance
            while i < gaps.len() && gaps[i].0 == lo {
                g += gaps[i].1;
                i += 1;
            }
            let hi = if i < gaps.len() { gaps[i].0.min(upper) } else { upper };
            inner += (g.min(1.0).powi(e) - base) * piece(lo, hi);
        }
        total += pj * inner;
    }
    total
}

/// `R_{n,δ} = n^r ∫₀^δ …`, condition (iii) truncated at `δ ∈ (0, 1]`.
pub fn exact_r_n_delta(dist: &DistributionSpec, n: usize, r: f64, delta: f64) -> Result<ConditionValue> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1], got {delta}")));
    }
    let mut v = exact_condition_iii(dist, n, r, delta)?;
    v.which = ConditionKind::RDelta;
    v.value = Extended::Finite((n as f64).powf(r) * v.value.to_f64());
    Ok(v)
}
