//! Finiteness of `E|T_n|^r`, the survival-function representation of that
//! moment, closed-form limit moments and the convergence experiment.
//!
//! Rules, first applicable wins:
//!
//! 1. finite-support discrete law: finite for every `r`;
//! 2. a continuous component and `r >= n - 1`: infinite;
//! 3. continuous law with a certified `q(h) <= C h^λ`, `λ > r/(n-1)`: finite;
//! 4. continuous law whose fitted `λ` (plus its 95% margin) is below `r/n`: infinite;
//! 5. otherwise indeterminate, with a band for the critical order `r*`.
//!
//! [`classify_grid`] adds monotone propagation: finiteness passes to larger
//! `n` and smaller `r`, divergence to smaller `n` and larger `r`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

use crate::dist::{default_h_grid, DistributionSpec};
use crate::error::{Error, Result};
use crate::extended::Extended;
use crate::mc::{estimate_moment, simulate_on_stream};
use crate::quad::{integrate_partition, QuadOptions};
use crate::survival::{h_min, Survival};

/// Citation strings carried in evidence entries.
pub mod citation {
    pub const FINITE_SUPPORT: &str = "Theorem prop3";
    pub const CONTINUOUS_COMPONENT: &str = "Theorem thm0";
    pub const CONCENTRATION_SUFFICIENT: &str = "Theorem thm3(i)";
    pub const CONCENTRATION_NECESSARY: &str = "Theorem thm3(ii)";
    pub const BOUNDED_DENSITY: &str = "Proposition prop4";
    pub const MONOTONE_IN_N: &str = "Theorem thm-next";
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Finite,
    Infinite,
    /// `r*`, the supremum of finite orders, lies in `[r_star_low, r_star_high]`.
    Indeterminate { r_star_low: f64, r_star_high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub rule: String,
    pub citation: String,
    pub inputs: Map<String, Value>,
}

impl Evidence {
    fn new(rule: &str, citation: &str, inputs: Value) -> Self {
        let inputs = match inputs {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Self { rule: rule.into(), citation: citation.into(), inputs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationVerdict {
    pub n: usize,
    pub r: f64,
    pub verdict: Verdict,
    pub evidence: Vec<Evidence>,
}

/// Classifies `E|T_n|^r` for i.i.d. observations from `dist`.
pub fn classify(dist: &DistributionSpec, n: usize, r: f64) -> Result<ClassificationVerdict> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("moment order must be finite and > 0, got {r}")));
    }
    let nf = n as f64;
    let done = |verdict, evidence| Ok(ClassificationVerdict { n, r, verdict, evidence });

    if let Some(atoms) = dist.finite_atoms() {
        let max_abs = atoms.iter().map(|a| a.0.abs()).fold(0.0, f64::max);
        let min_gap = atoms.windows(2).map(|w| w[1].0 - w[0].0).fold(f64::INFINITY, f64::min);
        let ev = Evidence::new(
            "finite_support_discrete",
            citation::FINITE_SUPPORT,
            json!({
                "atoms": atoms.len(),
                "max_abs_atom": max_abs,
                "min_gap": if min_gap.is_finite() { json!(min_gap) } else { Value::Null },
                "bound": "condition (ii) <= max_abs_atom^r * min_gap^-r",
            }),
        );
        return done(Verdict::Finite, vec![ev]);
    }

    if r >= nf - 1.0 {
        let ev = Evidence::new(
            "continuous_component_order_limit",
            citation::CONTINUOUS_COMPONENT,
            json!({ "n": n, "r": r, "threshold": nf - 1.0 }),
        );
        return done(Verdict::Infinite, vec![ev]);
    }

    if !dist.atoms().is_empty() {
        let ev = Evidence::new(
            "mixed_law_band",
            citation::CONTINUOUS_COMPONENT,
            json!({ "n": n, "r": r, "note": "atoms and a continuous part: only the order limit n-1 is certified" }),
        );
        return done(Verdict::Indeterminate { r_star_low: 0.0, r_star_high: nf - 1.0 }, vec![ev]);
    }

    let mut evidence = Vec::new();
    let bound = dist.certified_q_bound().expect("purely continuous law has a certificate");
    let lambda = bound.exponent;
    if dist.check_prop4().unwrap_or(false) {
        evidence.push(Evidence::new("bounded_monotone_density", citation::BOUNDED_DENSITY, json!({ "q_exponent": 1.0 })));
    }
    if lambda > r / (nf - 1.0) {
        evidence.push(Evidence::new(
            "certified_concentration",
            citation::CONCENTRATION_SUFFICIENT,
            json!({
                "lambda": lambda,
                "constant": bound.constant,
                "reason": bound.reason,
                "required_above": r / (nf - 1.0),
            }),
        ));
        return done(Verdict::Finite, evidence);
    }

    let h_grid = default_h_grid();
    let profile = dist.concentration_profile(&h_grid)?;
    let fit = profile.fit_q;
    if let Some(fit) = fit {
        let margin = 1.96 * fit.slope_stderr;
        if fit.slope + margin < r / nf {
            evidence.push(Evidence::new(
                "fitted_concentration",
                citation::CONCENTRATION_NECESSARY,
                json!({
                    "lambda_fit": fit.slope,
                    "margin95": margin,
                    "required_below": r / nf,
                    "h_min": h_grid.last(),
                    "h_max": h_grid.first(),
                }),
            ));
            return done(Verdict::Infinite, evidence);
        }
    }
    let low = lambda * (nf - 1.0);
    let high = match fit {
        Some(f) => (nf * (f.slope + 1.96 * f.slope_stderr)).min(nf - 1.0),
        None => nf - 1.0,
    }
    .max(low);
    evidence.push(Evidence::new(
        "concentration_gap",
        citation::CONCENTRATION_SUFFICIENT,
        json!({
            "lambda": lambda,
            "lambda_fit": fit.map(|f| f.slope),
            "margin95": fit.map(|f| 1.96 * f.slope_stderr),
            "r_star_low": low,
            "r_star_high": high,
        }),
    ));
    done(Verdict::Indeterminate { r_star_low: low, r_star_high: high }, evidence)
}

/// Classifies every `(n, r)` of a grid, then propagates decided verdicts
/// monotonically onto indeterminate cells. Output is row-major in `n`.
pub fn classify_grid(dist: &DistributionSpec, n_grid: &[usize], r_grid: &[f64]) -> Result<Vec<ClassificationVerdict>> {
    let mut cells = Vec::with_capacity(n_grid.len() * r_grid.len());
    for &n in n_grid {
        for &r in r_grid {
            cells.push(classify(dist, n, r)?);
        }
    }
    let base = cells.clone();
    for cell in cells.iter_mut() {
        if !matches!(cell.verdict, Verdict::Indeterminate { .. }) {
            continue;
        }
        let finite_from = base
            .iter()
            .find(|o| o.verdict == Verdict::Finite && o.n <= cell.n && o.r >= cell.r);
        let infinite_from = base
            .iter()
            .find(|o| o.verdict == Verdict::Infinite && o.n >= cell.n && o.r <= cell.r);
        let (verdict, from) = match (finite_from, infinite_from) {
            (Some(f), None) => (Verdict::Finite, f),
            (None, Some(i)) => (Verdict::Infinite, i),
            _ => continue,
        };
        cell.evidence.push(Evidence::new(
            "monotone_propagation",
            citation::MONOTONE_IN_N,
            json!({ "from_n": from.n, "from_r": from.r }),
        ));
        cell.verdict = verdict;
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalMoment {
    pub n: usize,
    pub r: f64,
    pub value: f64,
    /// Estimated quadrature error.
    pub quad_error: f64,
    /// Survival at `z = n - h_min²`, where integration stops.
    pub tail_survival: f64,
    /// Bound on the part cut off below `h_min`: zero when the survival
    /// vanishes there, otherwise unbounded by the survival value alone.
    pub truncation_bound: Extended,
}

/// `E|T_n|^r = (r/2) n (n-1)^(r/2) ∫₀ⁿ z^(r/2-1) P(U*>z) (n-z)^-(r/2+1) dz`.
///
/// `[0, n/2]` is integrated in `w = z^(r/2)`, which removes the power at
/// zero; `[n/2, n)` in `h = √(n-z)`, stopping at `h = n^-4`.
pub fn moment_via_survival(curve: &dyn Survival, r: f64) -> Result<SurvivalMoment> {
    moment_via_survival_with(curve, r, QuadOptions::default())
}

pub fn moment_via_survival_with(curve: &dyn Survival, r: f64, opts: QuadOptions) -> Result<SurvivalMoment> {
    curve.validate()?;
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("moment order must be finite and > 0, got {r}")));
    }
    let n = curve.n();
    let nf = n as f64;
    let half = 0.5 * nf;
    let scale = nf * (nf - 1.0).powf(0.5 * r);
    let breaks = curve.breakpoints();

    let mut w_pts = vec![0.0, half.powf(0.5 * r)];
    w_pts.extend(breaks.iter().filter(|&&z| z > 0.0 && z < half).map(|z| z.powf(0.5 * r)));
    w_pts.sort_by(f64::total_cmp);
    let left = integrate_partition(
        |w: f64| {
            let z = w.powf(2.0 / r);
            scale * curve.survival(z) * (nf - z).powf(-(0.5 * r + 1.0))
        },
        &w_pts,
        opts,
    );

    let hmin = h_min(n);
    let mut h_pts = vec![hmin, half.sqrt()];
    h_pts.extend(
        breaks
            .iter()
            .map(|&z| (nf - z).sqrt())
            .filter(|&h| h > hmin && h < half.sqrt()),
    );
    h_pts.sort_by(f64::total_cmp);
    let right = integrate_partition(
        |h: f64| {
            let h2 = h * h;
            r * scale * (nf - h2).powf(0.5 * r - 1.0) * h.powf(-(r + 1.0)) * curve.survival(nf - h2)
        },
        &h_pts,
        opts,
    );

    let tail_survival = curve.survival(nf - hmin * hmin);
    Ok(SurvivalMoment {
        n,
        r,
        value: left.value + right.value,
        quad_error: left.error + right.error,
        tail_survival,
        truncation_bound: if tail_survival == 0.0 { Extended::Finite(0.0) } else { Extended::Infinite },
    })
}

/// `E|T|^r` for `T ~ t_ν`; infinite for `r >= ν`.
pub fn limit_moment(nu: f64, r: f64) -> Result<Extended> {
    if !(nu > 0.0) || !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("need nu > 0 and r > 0, got nu = {nu}, r = {r}")));
    }
    if r >= nu {
        return Ok(Extended::Infinite);
    }
    let ln = 0.5 * r * nu.ln() + ln_gamma(0.5 * (r + 1.0)) + ln_gamma(0.5 * (nu - r)) - 0.5 * PI.ln() - ln_gamma(0.5 * nu);
    Ok(Extended::Finite(ln.exp()))
}

/// `E|Z|^r = 2^(r/2) Γ((r+1)/2) / √π` for standard normal `Z`.
pub fn normal_abs_moment(r: f64) -> f64 {
    (0.5 * r * 2f64.ln() + ln_gamma(0.5 * (r + 1.0)) - 0.5 * PI.ln()).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub divergence_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub r: f64,
    pub rows: Vec<ConvergenceRow>,
    /// `E|Z|^r` for standard normal `Z`.
    pub limit: f64,
    /// Largest `|estimate - limit|` over the top quarter of the `n` grid.
    pub max_abs_dev_top_quartile: f64,
}

/// Monte Carlo `E|T_n|^r` along an `n` grid, against the standard normal limit.
///
/// The limit is only meaningful for centred laws with finite variance; other
/// laws are rejected.
pub fn convergence_experiment(
    dist: &DistributionSpec,
    r: f64,
    n_grid: &[usize],
    count: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("n grid must be nonempty and strictly increasing".into()));
    }
    if !dist.has_finite_variance() {
        return Err(Error::Inapplicable("infinite variance: the standard normal limit is not assumed".into()));
    }
    let mean = dist.mean().unwrap_or(f64::NAN);
    if mean.abs() > 1e-12 {
        return Err(Error::Inapplicable(format!("mean {mean} != 0: T_n does not converge in law")));
    }
    let first = classify(dist, n_grid[0], r)?;
    if first.verdict == Verdict::Infinite {
        let cites: Vec<&str> = first.evidence.iter().map(|e| e.citation.as_str()).collect();
        return Err(Error::Divergent(format!(
            "E|T_{}|^{r} is infinite ({})",
            n_grid[0],
            cites.join(", ")
        )));
    }
    let limit = normal_abs_moment(r);
    let mut rows = Vec::with_capacity(n_grid.len());
    for (i, &n) in n_grid.iter().enumerate() {
        let sims = simulate_on_stream(dist, n, count, seed, 2000 + i as u64)?;
        let est = estimate_moment(&sims, r)?;
        rows.push(ConvergenceRow { n, estimate: est.value, std_error: est.std_error, divergence_flag: est.divergence_flag });
    }
    let top = n_grid.len().div_ceil(4);
    let max_abs_dev_top_quartile = rows[rows.len() - top..]
        .iter()
        .map(|row| (row.estimate - limit).abs())
        .fold(0.0, f64::max);
    Ok(ConvergenceReport { r, rows, limit, max_abs_dev_top_quartile })
}
