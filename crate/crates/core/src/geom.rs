//! Extremes of `n - u_n` near the all-equal ray.
//!
//! `u_n(x) = (Σx)² / Σx²` equals `n` exactly on the diagonal. Two questions
//! are checked numerically here: how small `n - u_n` can be once one
//! coordinate is pushed a relative distance `h` away from the first, and
//! how large it can get when every coordinate stays inside a box of
//! relative half-width `c2·h/√(n-1)` around the first.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_N: usize = 8;
/// Local descents per [`lemma1_verify`] call.
pub const STARTS: usize = 32;
/// Central-difference step, relative to the coordinate.
pub const GRAD_STEP: f64 = 1e-7;
/// Interior points drawn by [`interior_stationarity_check`].
pub const INTERIOR_SAMPLES: usize = 1000;

const LEMMA1_TOL: f64 = 1e-9;
const LEMMA2_TOL: f64 = 1e-12;
const NECESSITY_OFFSET: f64 = 1e-3;
const START_SEED: u64 = 0x6765_6f6d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeometryMode {
    #[serde(rename = "lemma1Min")]
    Lemma1Min,
    #[serde(rename = "lemma2CornerMax")]
    Lemma2CornerMax,
}

impl GeometryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GeometryMode::Lemma1Min => "lemma1Min",
            GeometryMode::Lemma2CornerMax => "lemma2CornerMax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub n: usize,
    pub h: f64,
    pub mode: GeometryMode,
    pub numeric_extremum: f64,
    pub analytic_extremum: f64,
    /// Full point `(x_1, ..., x_n)` attaining `numeric_extremum`.
    pub argext: Vec<f64>,
    /// `√(2+2h+h²)` for the minimum, the box constant `c2` for the corners.
    pub constant_checked: f64,
    pub gap: f64,
    /// Minimum: `| |x2-x1| - h|x1| |` at the minimizer. Corners: worst
    /// disagreement between a corner and its closed form.
    pub constraint_residual: f64,
    /// `n - u_n(argext)` recomputed from the plain ratio.
    pub recomputed: f64,
    /// Odd n only: the k = 0 corner value just above the necessity bound.
    pub necessity_value: Option<f64>,
    pub pass: bool,
    pub diagnostic: Option<String>,
}

/// `(Σx)² / Σx²`.
pub fn u_n(x: &[f64]) -> Result<f64> {
    let ss: f64 = x.iter().map(|v| v * v).sum();
    if x.is_empty() || ss == 0.0 {
        return Err(Error::InvalidArgument("u_n undefined for the zero vector".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("u_n needs finite coordinates".into()));
    }
    let s: f64 = x.iter().sum();
    Ok((s * s / ss).clamp(0.0, x.len() as f64))
}

// n - u_n as Σ_{i<j}(x_i - x_j)² / Σx², which keeps full relative accuracy near the diagonal
fn deficit(x: &[f64]) -> f64 {
    let ss: f64 = x.iter().map(|v| v * v).sum();
    let mut d = 0.0;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let e = x[i] - x[j];
            d += e * e;
        }
    }
    d / ss
}

fn check_range(n: usize, h: f64) -> Result<()> {
    if !(2..=MAX_N).contains(&n) {
        return Err(Error::InvalidArgument(format!("geometry needs n in [2, {MAX_N}], got {n}")));
    }
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::InvalidArgument(format!("h must lie in (0, 1), got {h}")));
    }
    Ok(())
}

pub fn lemma1_analytic(h: f64) -> f64 {
    h * h / (2.0 + 2.0 * h + h * h)
}

pub fn lemma1_constant(h: f64) -> f64 {
    (2.0 + 2.0 * h + h * h).sqrt()
}

/// Minimizes `n - u_n` over `x_1 = 1`, `|x_2 - x_1| >= h`.
pub fn lemma1_verify(n: usize, h: f64) -> Result<GeometryReport> {
    lemma1_verify_scaled(n, h, 1.0)
}

/// As [`lemma1_verify`] with `x_1 = s` and the constraint `|x_2 - x_1| >= h|s|`.
pub fn lemma1_verify_scaled(n: usize, h: f64, s: f64) -> Result<GeometryReport> {
    check_range(n, h)?;
    if !(s.is_finite() && s != 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be finite and nonzero, got {s}")));
    }
    let (x, value) = lemma1_search(n, h, s, true);
    Ok(lemma1_report(n, h, s, x, value))
}

fn lemma1_report(n: usize, h: f64, s: f64, x: Vec<f64>, value: f64) -> GeometryReport {
    let analytic = lemma1_analytic(h);
    let gap = (value - analytic).abs();
    let radius = h * s.abs();
    let shift = (x[1] - x[0]).abs();
    let residual = (shift - radius).abs();
    let recomputed = n as f64 - u_n(&x).unwrap_or(f64::NAN);
    let mut problems = Vec::new();
    if shift < radius - 1e-10 * s.abs() {
        problems.push(format!("infeasible: |x2-x1| = {shift} < {radius}"));
    }
    if gap > LEMMA1_TOL {
        problems.push(format!("gap {gap:e} above {LEMMA1_TOL:e}"));
    }
    if residual > LEMMA1_TOL * s.abs().max(1.0) {
        problems.push(format!("constraint not active: residual {residual:e}"));
    }
    if !((recomputed - value).abs() <= LEMMA2_TOL * n as f64) {
        problems.push(format!("recomputed value {recomputed} disagrees with {value}"));
    }
    GeometryReport {
        n,
        h,
        mode: GeometryMode::Lemma1Min,
        numeric_extremum: value,
        analytic_extremum: analytic,
        argext: x,
        constant_checked: lemma1_constant(h),
        gap,
        constraint_residual: residual,
        recomputed,
        necessity_value: None,
        pass: problems.is_empty(),
        diagnostic: (!problems.is_empty()).then(|| problems.join("; ")),
    }
}

// best of STARTS projected descents; the first start is the closed-form candidate when `seed_candidate`
fn lemma1_search(n: usize, h: f64, s: f64, seed_candidate: bool) -> (Vec<f64>, f64) {
    let radius = h * s.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED ^ ((n as u64) << 32) ^ h.to_bits());
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(STARTS);
    if seed_candidate {
        let eps = h * s;
        let rest = s * (2.0 + 2.0 * h + h * h) / (2.0 + h);
        let mut y = vec![rest; n - 1];
        y[0] = s + eps;
        starts.push(y);
    }
    while starts.len() < STARTS {
        let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let mut y: Vec<f64> = (1..n).map(|_| s * (1.0 + rng.random_range(-0.5..0.5))).collect();
        y[0] = s + side * radius * (1.0 + rng.random_range(0.0..2.0));
        starts.push(y);
    }
    let project = |y: &mut [f64]| {
        let d = y[0] - s;
        if d.abs() < radius {
            y[0] = if d >= 0.0 { s + radius } else { s - radius };
        }
    };
    let objective = |y: &[f64]| {
        let mut x = Vec::with_capacity(n);
        x.push(s);
        x.extend_from_slice(y);
        deficit(&x)
    };
    starts
        .into_iter()
        .map(|y| {
            let y = projected_descent(y, &objective, &project);
            let value = objective(&y);
            (y, value)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(y, value)| {
            let mut x = vec![s];
            x.extend(y);
            (x, value)
        })
        .expect("at least one start")
}

fn num_grad(f: &impl Fn(&[f64]) -> f64, y: &[f64]) -> Vec<f64> {
    let mut probe = y.to_vec();
    (0..y.len())
        .map(|i| {
            let step = GRAD_STEP * y[i].abs().max(1.0);
            probe[i] = y[i] + step;
            let up = f(&probe);
            probe[i] = y[i] - step;
            let down = f(&probe);
            probe[i] = y[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

// projected gradient descent with Armijo backtracking along the projection arc
fn projected_descent(
    mut y: Vec<f64>,
    f: &impl Fn(&[f64]) -> f64,
    project: &impl Fn(&mut [f64]),
) -> Vec<f64> {
    project(&mut y);
    let mut fy = f(&y);
    let mut alpha = 1.0;
    for _ in 0..20_000 {
        let g = num_grad(f, &y);
        let mut accepted = false;
        let mut trial = y.clone();
        for _ in 0..60 {
            for ((t, yi), gi) in trial.iter_mut().zip(&y).zip(&g) {
                *t = yi - alpha * gi;
            }
            project(&mut trial);
            let decrease: f64 = g.iter().zip(&y).zip(&trial).map(|((gi, yi), ti)| gi * (yi - ti)).sum();
            let ft = f(&trial);
            if ft <= fy - 1e-4 * decrease && decrease > 0.0 {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        let moved = y.iter().zip(&trial).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ft = f(&trial);
        let drop = fy - ft;
        y.copy_from_slice(&trial);
        fy = ft;
        if moved <= 1e-15 * y.iter().map(|v| v.abs()).fold(1.0, f64::max) || drop <= 1e-18 {
            break;
        }
        alpha = (alpha * 2.0).min(1e6);
    }
    y
}

/// Closed form of `n - u_n` at a corner with `k = Σσ_i`.
pub fn lemma2_corner_formula(n: usize, h: f64, c2: f64, k: i64) -> f64 {
    let nf = n as f64;
    let kf = k as f64;
    let m = (nf - 1.0).sqrt();
    h * h * c2 * c2 * (nf - kf * kf / (nf - 1.0)) / (nf + c2 * c2 * h * h + 2.0 * kf * c2 * h / m)
}

fn check_box(n: usize, h: f64, c2: f64) -> Result<()> {
    check_range(n, h)?;
    if !(c2 > 0.0 && c2.is_finite()) {
        return Err(Error::InvalidArgument(format!("c2 must be positive, got {c2}")));
    }
    if c2 * h >= ((n - 1) as f64).sqrt() {
        return Err(Error::InvalidArgument(format!("need c2*h < sqrt(n-1), got c2={c2}, h={h}, n={n}")));
    }
    Ok(())
}

fn corner(n: usize, h: f64, c2: f64, mask: u32) -> (Vec<f64>, i64) {
    let a = c2 * h / ((n - 1) as f64).sqrt();
    let mut k = 0;
    let mut x = vec![1.0];
    for i in 0..n - 1 {
        let sigma = if mask >> i & 1 == 1 { 1 } else { -1 };
        k += sigma;
        x.push(1.0 + sigma as f64 * a);
    }
    (x, k)
}

/// Largest `n - u_n` over the corners `x_1 = 1`, `x_i = 1 ± c2·h/√(n-1)`.
pub fn lemma2_verify(n: usize, h: f64, c2: f64) -> Result<GeometryReport> {
    check_box(n, h, c2)?;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut mismatch: f64 = 0.0;
    for mask in 0..1u32 << (n - 1) {
        let (x, k) = corner(n, h, c2, mask);
        let v = deficit(&x);
        mismatch = mismatch.max((v - lemma2_corner_formula(n, h, c2, k)).abs());
        if best.as_ref().is_none_or(|b| v > b.1) {
            best = Some((x, v));
        }
    }
    let (x, numeric) = best.expect("n >= 2 has corners");
    let m = (n - 1) as i64;
    let analytic = (-m..=m)
        .step_by(2)
        .map(|k| lemma2_corner_formula(n, h, c2, k))
        .fold(f64::NEG_INFINITY, f64::max);
    let gap = (numeric - analytic).abs();
    let recomputed = n as f64 - u_n(&x)?;

    let mut problems = Vec::new();
    if gap > LEMMA2_TOL {
        problems.push(format!("corner max {numeric} vs closed form {analytic}"));
    }
    if mismatch > LEMMA2_TOL {
        problems.push(format!("corner/closed-form mismatch {mismatch:e}"));
    }
    if (recomputed - numeric).abs() > LEMMA2_TOL * n as f64 {
        problems.push(format!("recomputed value {recomputed} disagrees with {numeric}"));
    }
    if c2 == 1.0 && numeric >= h * h {
        problems.push(format!("corner max {numeric} not below h^2 = {}", h * h));
    }
    let necessity_value = if n % 2 == 1 {
        let c = lemma2_necessity_constant(n, h) + NECESSITY_OFFSET;
        let v = (0..1u32 << (n - 1))
            .map(|mask| corner(n, h, c, mask))
            .find(|(_, k)| *k == 0)
            .map(|(x, _)| deficit(&x))
            .expect("odd n has a balanced corner");
        if v < h * h {
            problems.push(format!("k=0 corner at c2={c} gives {v} < h^2"));
        }
        Some(v)
    } else {
        None
    };
    Ok(GeometryReport {
        n,
        h,
        mode: GeometryMode::Lemma2CornerMax,
        numeric_extremum: numeric,
        analytic_extremum: analytic,
        argext: x,
        constant_checked: c2,
        gap,
        constraint_residual: mismatch,
        recomputed,
        necessity_value,
        pass: problems.is_empty(),
        diagnostic: (!problems.is_empty()).then(|| problems.join("; ")),
    })
}

/// Largest admissible box constant for odd `n`: `√(n/(n-h²))`.
pub fn lemma2_necessity_constant(n: usize, h: f64) -> f64 {
    let nf = n as f64;
    (nf / (nf - h * h)).sqrt()
}

/// Draws [`INTERIOR_SAMPLES`] points of the box and checks none beats the best corner.
pub fn interior_stationarity_check(n: usize, h: f64, c2: f64) -> Result<bool> {
    let report = lemma2_verify(n, h, c2)?;
    let a = c2 * h / ((n - 1) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED ^ 0x2 ^ ((n as u64) << 40) ^ h.to_bits() ^ c2.to_bits());
    let mut x = vec![1.0; n];
    for _ in 0..INTERIOR_SAMPLES {
        for xi in x.iter_mut().skip(1) {
            *xi = 1.0 + rng.random_range(-a..=a);
        }
        if deficit(&x) > report.numeric_extremum + LEMMA2_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

/// [`lemma1_verify`] for every `(n, h)` cell, in grid order.
pub fn lemma1_grid(n_list: &[usize], h_list: &[f64]) -> Result<Vec<GeometryReport>> {
    let cells: Vec<(usize, f64)> = n_list.iter().flat_map(|&n| h_list.iter().map(move |&h| (n, h))).collect();
    cells.into_par_iter().map(|(n, h)| lemma1_verify(n, h)).collect()
}

/// [`lemma2_verify`] for every `(n, h)` cell at box constant `c2`, in grid order.
pub fn lemma2_grid(n_list: &[usize], h_list: &[f64], c2: f64) -> Result<Vec<GeometryReport>> {
    let cells: Vec<(usize, f64)> = n_list.iter().flat_map(|&n| h_list.iter().map(move |&h| (n, h))).collect();
    cells.into_par_iter().map(|(n, h)| lemma2_verify(n, h, c2)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const H_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

    #[test]
    fn u_n_examples() {
        assert_eq!(u_n(&[1.0, 1.0, 1.0]).unwrap(), 3.0);
        assert_eq!(u_n(&[1.0, -1.0]).unwrap(), 0.0);
        assert!((u_n(&[1.0, 2.0]).unwrap() - 1.8).abs() < 1e-15);
        assert!(u_n(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn deficit_matches_ratio() {
        let x = [1.0, 1.3, 0.7, 2.0];
        assert!((deficit(&x) - (4.0 - u_n(&x).unwrap())).abs() < 1e-14);
    }

    #[test]
    fn min_n2_dense_grid_oracle() {
        // with x1 = 1 the only freedom is x2, so scan it directly
        let h = 0.5;
        let mut best = f64::INFINITY;
        for i in 0..=2_000_000 {
            let off = h + 4.0 * i as f64 / 2_000_000.0;
            for x2 in [1.0 + off, 1.0 - off] {
                best = best.min(deficit(&[1.0, x2]));
            }
        }
        let r = lemma1_verify(2, h).unwrap();
        assert!((r.analytic_extremum - 0.25 / 3.25).abs() < 1e-15);
        assert!((r.numeric_extremum - best).abs() < 1e-9, "{} vs {best}", r.numeric_extremum);
        assert!(r.pass, "{:?}", r.diagnostic);
    }

    #[test]
    fn min_descent_alone_reaches_optimum() {
        // no closed-form seed: the random starts have to find it
        for n in [2, 3, 5, 8] {
            for h in [0.1, 0.5, 0.9] {
                let (x, v) = lemma1_search(n, h, 1.0, false);
                let r = lemma1_report(n, h, 1.0, x, v);
                assert!(r.gap <= 1e-9, "n={n} h={h} gap={}", r.gap);
            }
        }
    }

    #[test]
    fn min_grid_within_tolerance() {
        let reports = lemma1_grid(&[2, 3, 4, 5, 6, 7, 8], &H_GRID).unwrap();
        for r in &reports {
            assert!(r.pass, "n={} h={}: {:?}", r.n, r.h, r.diagnostic);
            assert!((r.numeric_extremum - r.recomputed).abs() <= 1e-12);
            assert!(r.constraint_residual <= 1e-9);
        }
        let n5 = reports.iter().find(|r| r.n == 5 && r.h == 0.9).unwrap();
        assert!((n5.numeric_extremum - 0.81 / 4.61).abs() < 1e-9);
    }

    #[test]
    fn min_vanishes_with_h() {
        let r = lemma1_verify(4, 1e-4).unwrap();
        assert!(r.numeric_extremum < 1e-8);
    }

    #[test]
    fn min_scale_invariant() {
        for s in [-2.0, 0.5, 10.0] {
            for n in [2, 4, 7] {
                let a = lemma1_verify(n, 0.3).unwrap();
                let b = lemma1_verify_scaled(n, 0.3, s).unwrap();
                assert!(b.pass, "s={s} n={n}: {:?}", b.diagnostic);
                assert!((a.numeric_extremum - b.numeric_extremum).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn corner_examples() {
        let r = lemma2_verify(3, 0.5, 1.0).unwrap();
        let k0 = lemma2_corner_formula(3, 0.5, 1.0, 0);
        assert!((k0 - 0.25 * 3.0 / 3.25).abs() < 1e-15);
        let a = 0.5 / 2f64.sqrt();
        assert!((deficit(&[1.0, 1.0 + a, 1.0 - a]) - k0).abs() < 1e-14);
        assert!(r.pass, "{:?}", r.diagnostic);

        let r = lemma2_verify(2, 0.3, 1.0).unwrap();
        assert!(deficit(&[1.0, 1.3]) < 0.09 && deficit(&[1.0, 0.7]) < 0.09);
        assert!(r.numeric_extremum < 0.09);

        let c = (3.0f64 / 2.75).sqrt();
        assert!((lemma2_corner_formula(3, 0.5, c, 0) - 0.25).abs() < 1e-15);
        assert!(r.necessity_value.is_none());
        let v = lemma2_verify(3, 0.5, 1.0).unwrap().necessity_value.unwrap();
        assert!(v >= 0.25);
    }

    #[test]
    fn corner_grid_strictly_below_h2() {
        let reports = lemma2_grid(&[2, 3, 4, 5, 6, 7, 8], &H_GRID, 1.0).unwrap();
        for r in &reports {
            assert!(r.pass, "n={} h={}: {:?}", r.n, r.h, r.diagnostic);
            assert!(r.numeric_extremum < r.h * r.h);
            assert!(r.constraint_residual <= 1e-12);
            assert_eq!(r.necessity_value.is_some(), r.n % 2 == 1);
        }
    }

    #[test]
    fn corner_rejects_oversized_box() {
        assert!(lemma2_verify(2, 0.9, 1.2).is_err());
        assert!(lemma2_verify(9, 0.5, 1.0).is_err());
    }

    #[test]
    fn interior_examples() {
        assert!(interior_stationarity_check(2, 0.5, 1.0).unwrap());
        assert!(interior_stationarity_check(4, 0.3, 1.0).unwrap());
        assert!(interior_stationarity_check(5, 1e-6, 1.0).unwrap());
    }

    #[test]
    fn interior_n2_scan_oracle() {
        // one free coordinate: a dense scan must not beat the endpoints
        let a = 0.5;
        let ends = deficit(&[1.0, 1.0 + a]).max(deficit(&[1.0, 1.0 - a]));
        for i in 0..=100_000 {
            let x2 = 1.0 - a + 2.0 * a * i as f64 / 100_000.0;
            assert!(deficit(&[1.0, x2]) <= ends + 1e-15);
        }
    }
}
