//! Observation laws: validated specs, sampling, interval probabilities and
//! the concentration functions
//!
//! ```text
//! Q(h) = sup_x P(|X - x| <= h)          (Lévy concentration)
//! q(h) = sup_x P(|X - x| <= |x| h)      (scaled concentration)
//! ```
//!
//! Discrete laws get exact concentration values. Unimodal families get
//! closed-form `Q`. Everything else is maximized numerically over a grid
//! with golden-section refinement, so the reported value is attained at
//! some evaluated `x` and is a lower bound on the supremum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use crate::error::{Error, Result};

/// Tolerance on probabilities and weights summing to one.
pub const SUM_TOLERANCE: f64 = 1e-12;
/// Atoms closer than this are rejected.
pub const ATOM_SEPARATION: f64 = 1e-12;
/// Golden-section stopping width in `x` (in `ln|x|` for `q`).
pub const REFINE_TOLERANCE: f64 = 1e-10;

/// Points per sign of the log-spaced `q` search grid.
const Q_GRID_PER_SIGN: usize = 512;
const Q_GRID_MIN: f64 = 1e-6;
const Q_GRID_MAX: f64 = 1e6;
/// Points of the linear `Q` search grid used for mixtures.
const BIG_Q_GRID: usize = 2048;
/// Grid maxima refined by golden section.
const REFINE_STARTS: usize = 16;

/// Raw, serializable shape of a law. Validation happens in
/// [`DistributionSpec`]'s constructors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    Discrete { atoms: Vec<(f64, f64)> },
    Normal { mean: f64, stddev: f64 },
    Cauchy { location: f64, scale: f64 },
    Uniform { a: f64, b: f64 },
    Pareto { shape: f64, scale: f64 },
    /// Density proportional to `|x - center|^(exponent - 1)` on
    /// `(center - halfwidth, center + halfwidth)`.
    PowerSingularity { center: f64, exponent: f64, halfwidth: f64 },
    Mixture { weights: Vec<f64>, components: Vec<Family> },
}

/// Internal form with precomputed cumulative tables.
#[derive(Debug, Clone)]
enum Law {
    Discrete { points: Vec<f64>, probs: Vec<f64>, cum: Vec<f64> },
    Normal { mean: f64, sd: f64 },
    Cauchy { loc: f64, scale: f64 },
    Uniform { a: f64, b: f64 },
    Pareto { shape: f64, scale: f64 },
    PowerSingularity { center: f64, beta: f64, w: f64 },
    Mixture { weights: Vec<f64>, cum: Vec<f64>, components: Vec<Law> },
}

/// A validated observation law `F`. Immutable; share freely across threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Family", into = "Family")]
pub struct DistributionSpec {
    family: Family,
    #[serde(skip)]
    law: Law,
}

impl PartialEq for DistributionSpec {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
    }
}

impl From<DistributionSpec> for Family {
    fn from(spec: DistributionSpec) -> Family {
        spec.family
    }
}

impl TryFrom<Family> for DistributionSpec {
    type Error = Error;

    fn try_from(family: Family) -> Result<Self> {
        let (family, law) = build(family, true)?;
        Ok(Self { family, law })
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidDistribution(msg.into()))
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        invalid(format!("{name} must be finite and > 0, got {v}"))
    }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} must be finite, got {v}"))
    }
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

fn check_sum(what: &str, values: &[f64]) -> Result<()> {
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return invalid(format!("{what} sum to {sum}"));
    }
    Ok(())
}

fn build(family: Family, top_level: bool) -> Result<(Family, Law)> {
    match family {
        Family::Discrete { mut atoms } => {
            if atoms.is_empty() {
                return invalid("discrete law needs at least one atom");
            }
            for &(x, p) in &atoms {
                check_finite("atom point", x)?;
                if !(p.is_finite() && p > 0.0) {
                    return invalid(format!("atom probability must be > 0, got {p} at {x}"));
                }
            }
            let probs: Vec<f64> = atoms.iter().map(|a| a.1).collect();
            check_sum("probabilities", &probs)?;
            atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in atoms.windows(2) {
                if w[1].0 - w[0].0 < ATOM_SEPARATION {
                    return invalid(format!(
                        "atoms at {} and {} are closer than {ATOM_SEPARATION}",
                        w[0].0, w[1].0
                    ));
                }
            }
            let points = atoms.iter().map(|a| a.0).collect();
            let probs: Vec<f64> = atoms.iter().map(|a| a.1).collect();
            let cum = cumulative(&probs);
            Ok((Family::Discrete { atoms }, Law::Discrete { points, probs, cum }))
        }
        Family::Normal { mean, stddev } => {
            check_finite("mean", mean)?;
            check_positive("stddev", stddev)?;
            Ok((family, Law::Normal { mean, sd: stddev }))
        }
        Family::Cauchy { location, scale } => {
            check_finite("location", location)?;
            check_positive("scale", scale)?;
            Ok((family, Law::Cauchy { loc: location, scale }))
        }
        Family::Uniform { a, b } => {
            check_finite("a", a)?;
            check_finite("b", b)?;
            if b <= a {
                return invalid(format!("uniform needs b > a, got a={a}, b={b}"));
            }
            Ok((family, Law::Uniform { a, b }))
        }
        Family::Pareto { shape, scale } => {
            check_positive("shape", shape)?;
            check_positive("scale", scale)?;
            Ok((family, Law::Pareto { shape, scale }))
        }
        Family::PowerSingularity { center, exponent, halfwidth } => {
            check_finite("center", center)?;
            check_positive("halfwidth", halfwidth)?;
            if !(exponent > 0.0 && exponent <= 1.0) {
                return invalid(format!("power-singularity exponent must lie in (0, 1], got {exponent}"));
            }
            Ok((family, Law::PowerSingularity { center, beta: exponent, w: halfwidth }))
        }
        Family::Mixture { weights, components } => {
            if !top_level {
                return invalid("nesting violation: mixture components must not be mixtures");
            }
            if weights.is_empty() || weights.len() != components.len() {
                return invalid(format!(
                    "mixture needs one weight per component, got {} weights and {} components",
                    weights.len(),
                    components.len()
                ));
            }
            for &w in &weights {
                if !(w.is_finite() && w > 0.0) {
                    return invalid(format!("mixture weight must be > 0, got {w}"));
                }
            }
            check_sum("mixture weights", &weights)?;
            let mut fams = Vec::with_capacity(components.len());
            let mut laws = Vec::with_capacity(components.len());
            for c in components {
                if matches!(c, Family::Mixture { .. }) {
                    return invalid("nesting violation: mixture components must not be mixtures");
                }
                let (f, l) = build(c, false)?;
                fams.push(f);
                laws.push(l);
            }
            let cum = cumulative(&weights);
            Ok((
                Family::Mixture { weights: weights.clone(), components: fams },
                Law::Mixture { weights, cum, components: laws },
            ))
        }
    }
}

fn pick(cum: &[f64], u: f64) -> usize {
    // cum[last] may fall short of 1 by rounding
    let total = *cum.last().expect("nonempty");
    cum.partition_point(|&c| c <= u * total).min(cum.len() - 1)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z * FRAC_1_SQRT_2)
}

fn normal_sf(z: f64) -> f64 {
    0.5 * erf::erfc(z * FRAC_1_SQRT_2)
}

/// Standard normal quantile, accurate in both tails.
fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else if p < 0.5 {
        -SQRT_2 * erf::erfc_inv(2.0 * p)
    } else {
        SQRT_2 * erf::erfc_inv(2.0 * (1.0 - p))
    }
}

impl Law {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Law::Discrete { points, cum, .. } => points[pick(cum, rng.random::<f64>())],
            Law::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            Law::Cauchy { loc, scale } => loc + scale * (PI * (rng.random::<f64>() - 0.5)).tan(),
            Law::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            Law::Pareto { shape, scale } => {
                let u = 1.0 - rng.random::<f64>(); // (0, 1]
                scale * u.powf(-1.0 / shape)
            }
            Law::PowerSingularity { center, beta, w } => {
                let v = 2.0 * rng.random::<f64>() - 1.0;
                center + v.signum() * w * v.abs().powf(1.0 / beta)
            }
            Law::Mixture { cum, components, .. } => components[pick(cum, rng.random::<f64>())].sample(rng),
        }
    }

    /// `P(X <= x)`.
    fn cdf(&self, x: f64) -> f64 {
        match self {
            Law::Discrete { points, probs, .. } => {
                let k = points.partition_point(|&p| p <= x);
                probs[..k].iter().sum()
            }
            Law::Mixture { weights, components, .. } => {
                weights.iter().zip(components).map(|(w, c)| w * c.cdf(x)).sum()
            }
            _ => self.continuous_cdf(x),
        }
    }

    /// `P(X < x)`.
    fn cdf_before(&self, x: f64) -> f64 {
        match self {
            Law::Discrete { points, probs, .. } => {
                let k = points.partition_point(|&p| p < x);
                probs[..k].iter().sum()
            }
            Law::Mixture { weights, components, .. } => {
                weights.iter().zip(components).map(|(w, c)| w * c.cdf_before(x)).sum()
            }
            _ => self.continuous_cdf(x),
        }
    }

    fn continuous_cdf(&self, x: f64) -> f64 {
        match *self {
            Law::Normal { mean, sd } => normal_cdf((x - mean) / sd),
            Law::Cauchy { loc, scale } => 0.5 + ((x - loc) / scale).atan() / PI,
            Law::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Law::Pareto { shape, scale } => {
                if x <= scale {
                    0.0
                } else {
                    -(shape * (scale / x).ln()).exp_m1()
                }
            }
            Law::PowerSingularity { center, beta, w } => {
                let d = x - center;
                if d.abs() >= w {
                    if d > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    0.5 + 0.5 * d.signum() * (d.abs() / w).powf(beta)
                }
            }
            Law::Discrete { .. } | Law::Mixture { .. } => unreachable!("not a continuous family"),
        }
    }

    /// `P(X > x)`, computed without cancellation in the upper tail.
    fn continuous_sf(&self, x: f64) -> f64 {
        match *self {
            Law::Normal { mean, sd } => normal_sf((x - mean) / sd),
            Law::Cauchy { loc, scale } => 0.5 - ((x - loc) / scale).atan() / PI,
            Law::Uniform { a, b } => ((b - x) / (b - a)).clamp(0.0, 1.0),
            Law::Pareto { shape, scale } => {
                if x <= scale {
                    1.0
                } else {
                    (scale / x).powf(shape)
                }
            }
            _ => 1.0 - self.continuous_cdf(x),
        }
    }

    fn continuous_quantile(&self, p: f64) -> f64 {
        match *self {
            Law::Normal { mean, sd } => mean + sd * normal_quantile(p),
            Law::Cauchy { loc, scale } => loc + scale * (PI * (p - 0.5)).tan(),
            Law::Uniform { a, b } => a + (b - a) * p,
            Law::Pareto { shape, scale } => scale * (1.0 - p).powf(-1.0 / shape),
            Law::PowerSingularity { center, beta, w } => {
                let v = 2.0 * p - 1.0;
                center + v.signum() * w * v.abs().powf(1.0 / beta)
            }
            Law::Discrete { .. } | Law::Mixture { .. } => unreachable!("not a continuous family"),
        }
    }

    /// Inverse of the survival function.
    fn continuous_isf(&self, q: f64) -> f64 {
        match *self {
            Law::Normal { mean, sd } => mean - sd * normal_quantile(q),
            Law::Cauchy { loc, scale } => loc + scale * (PI * (0.5 - q)).tan(),
            Law::Uniform { a, b } => b - (b - a) * q,
            Law::Pareto { shape, scale } => scale * q.powf(-1.0 / shape),
            _ => self.continuous_quantile(1.0 - q),
        }
    }

    fn median(&self) -> f64 {
        match *self {
            Law::Normal { mean, .. } => mean,
            Law::Cauchy { loc, .. } => loc,
            Law::Uniform { a, b } => 0.5 * (a + b),
            Law::Pareto { shape, scale } => scale * 2f64.powf(1.0 / shape),
            Law::PowerSingularity { center, .. } => center,
            _ => f64::NAN,
        }
    }

    /// Mass of the open interval `(lo, hi)`.
    fn prob_open(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        match self {
            Law::Discrete { .. } | Law::Mixture { .. } => (self.cdf_before(hi) - self.cdf(lo)).max(0.0),
            _ => self.continuous_mass(lo, hi),
        }
    }

    /// Mass of the closed interval `[lo, hi]`.
    fn prob_closed(&self, lo: f64, hi: f64) -> f64 {
        if hi < lo {
            return 0.0;
        }
        match self {
            Law::Discrete { .. } | Law::Mixture { .. } => (self.cdf(hi) - self.cdf_before(lo)).max(0.0),
            _ => self.continuous_mass(lo, hi),
        }
    }

    fn continuous_mass(&self, lo: f64, hi: f64) -> f64 {
        let m = self.median();
        let v = if lo >= m {
            self.continuous_sf(lo) - self.continuous_sf(hi)
        } else {
            self.continuous_cdf(hi) - self.continuous_cdf(lo)
        };
        v.max(0.0)
    }

    /// Draws from `F` conditioned on the open interval `(lo, hi)`.
    /// `None` when the interval carries no mass.
    fn sample_within<R: Rng + ?Sized>(&self, lo: f64, hi: f64, rng: &mut R) -> Option<f64> {
        match self {
            Law::Discrete { points, probs, .. } => {
                let start = points.partition_point(|&p| p <= lo);
                let end = points.partition_point(|&p| p < hi);
                if start >= end {
                    return None;
                }
                let cum = cumulative(&probs[start..end]);
                Some(points[start + pick(&cum, rng.random::<f64>())])
            }
            Law::Mixture { weights, components, .. } => {
                let masses: Vec<f64> = weights
                    .iter()
                    .zip(components)
                    .map(|(w, c)| w * c.prob_open(lo, hi))
                    .collect();
                if masses.iter().all(|&m| m <= 0.0) {
                    return None;
                }
                let k = pick(&cumulative(&masses), rng.random::<f64>());
                components[k].sample_within(lo, hi, rng)
            }
            _ => {
                if self.continuous_mass(lo, hi) <= 0.0 {
                    return None;
                }
                let u: f64 = rng.random();
                let x = if lo >= self.median() {
                    let (s_lo, s_hi) = (self.continuous_sf(lo), self.continuous_sf(hi));
                    self.continuous_isf(s_hi + u * (s_lo - s_hi))
                } else {
                    let (c_lo, c_hi) = (self.continuous_cdf(lo), self.continuous_cdf(hi));
                    self.continuous_quantile(c_lo + u * (c_hi - c_lo))
                };
                // inversion rounding can land a hair outside
                Some(x.clamp(lo.next_up(), hi.next_down()))
            }
        }
    }

    fn atoms_into(&self, scale: f64, out: &mut Vec<(f64, f64)>) {
        match self {
            Law::Discrete { points, probs, .. } => {
                out.extend(points.iter().zip(probs).map(|(&x, &p)| (x, scale * p)))
            }
            Law::Mixture { weights, components, .. } => {
                for (w, c) in weights.iter().zip(components) {
                    c.atoms_into(scale * w, out);
                }
            }
            _ => {}
        }
    }

    fn has_continuous(&self) -> bool {
        match self {
            Law::Discrete { .. } => false,
            Law::Mixture { components, .. } => components.iter().any(Law::has_continuous),
            _ => true,
        }
    }

    /// Points the numeric searches always evaluate: modes, centres, edges.
    fn anchors(&self, out: &mut Vec<f64>) {
        match *self {
            Law::Discrete { ref points, .. } => out.extend(points),
            Law::Normal { mean, .. } => out.push(mean),
            Law::Cauchy { loc, .. } => out.push(loc),
            Law::Uniform { a, b } => out.extend([a, b, 0.5 * (a + b)]),
            Law::Pareto { scale, .. } => out.push(scale),
            Law::PowerSingularity { center, w, .. } => out.extend([center, center - w, center + w]),
            Law::Mixture { ref components, .. } => components.iter().for_each(|c| c.anchors(out)),
        }
    }

    /// A finite range holding essentially all of the mass.
    fn range_hint(&self) -> (f64, f64) {
        match *self {
            Law::Discrete { ref points, .. } => (points[0], points[points.len() - 1]),
            Law::Normal { mean, sd } => (mean - 12.0 * sd, mean + 12.0 * sd),
            Law::Cauchy { loc, scale } => (loc - 200.0 * scale, loc + 200.0 * scale),
            Law::Uniform { a, b } => (a, b),
            Law::Pareto { shape, scale } => (scale, scale * 1e4f64.powf(1.0 / shape).min(1e12)),
            Law::PowerSingularity { center, w, .. } => (center - w, center + w),
            Law::Mixture { ref components, .. } => components
                .iter()
                .map(Law::range_hint)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), (a, b)| (l.min(a), h.max(b))),
        }
    }
}

/// Golden-section maximization of `f` on `[a, b]`. Returns the best point
/// evaluated, so the value is always attained.
pub(crate) fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut best = (a, f(a));
    let fb = f(b);
    if fb > best.1 {
        best = (b, fb);
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc > best.1 {
            best = (c, fc);
        }
        if fd > best.1 {
            best = (d, fd);
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// Evaluates `f` on an ordered grid, refines the best grid cells by golden
/// section, and also evaluates every anchor point.
fn grid_maximize<F: Fn(f64) -> f64>(f: &F, grid: &[f64], anchors: &[f64], tol: f64) -> f64 {
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let mut best = values.iter().copied().fold(0.0f64, f64::max);
    for &x in anchors {
        best = best.max(f(x));
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    for &i in order.iter().take(REFINE_STARTS) {
        if values[i] <= 0.0 {
            break;
        }
        let lo = grid[i.saturating_sub(1)];
        let hi = grid[(i + 1).min(grid.len() - 1)];
        best = best.max(golden_max(f, lo, hi, tol).1);
    }
    best.min(1.0)
}

impl DistributionSpec {
    pub fn discrete(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Family::Discrete { atoms }.try_into()
    }

    pub fn normal(mean: f64, stddev: f64) -> Result<Self> {
        Family::Normal { mean, stddev }.try_into()
    }

    pub fn cauchy(location: f64, scale: f64) -> Result<Self> {
        Family::Cauchy { location, scale }.try_into()
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Family::Uniform { a, b }.try_into()
    }

    pub fn pareto(shape: f64, scale: f64) -> Result<Self> {
        Family::Pareto { shape, scale }.try_into()
    }

    pub fn power_singularity(center: f64, exponent: f64, halfwidth: f64) -> Result<Self> {
        Family::PowerSingularity { center, exponent, halfwidth }.try_into()
    }

    pub fn mixture(weights: Vec<f64>, components: Vec<DistributionSpec>) -> Result<Self> {
        Family::Mixture {
            weights,
            components: components.into_iter().map(|c| c.family).collect(),
        }
        .try_into()
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Short human-readable label, e.g. `normal(0,1)`.
    pub fn label(&self) -> String {
        fn go(f: &Family) -> String {
            match f {
                Family::Discrete { atoms } => format!("discrete[{} atoms]", atoms.len()),
                Family::Normal { mean, stddev } => format!("normal({mean},{stddev})"),
                Family::Cauchy { location, scale } => format!("cauchy({location},{scale})"),
                Family::Uniform { a, b } => format!("uniform({a},{b})"),
                Family::Pareto { shape, scale } => format!("pareto({shape},{scale})"),
                Family::PowerSingularity { center, exponent, halfwidth } => {
                    format!("power_singularity({center},{exponent},{halfwidth})")
                }
                Family::Mixture { weights, components } => {
                    let parts: Vec<String> = weights
                        .iter()
                        .zip(components)
                        .map(|(w, c)| format!("{w}*{}", go(c)))
                        .collect();
                    format!("mixture({})", parts.join("+"))
                }
            }
        }
        go(&self.family)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.law.sample(rng)
    }

    /// `count` i.i.d. draws; bit-identical for identical `(self, count, seed)`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.law.sample(&mut rng)).collect()
    }

    /// Draw conditioned on the open interval `(lo, hi)`.
    pub fn draw_within<R: Rng + ?Sized>(&self, lo: f64, hi: f64, rng: &mut R) -> Option<f64> {
        self.law.sample_within(lo, hi, rng)
    }

    /// `E X`, or `None` when it does not exist.
    pub fn mean(&self) -> Option<f64> {
        fn go(f: &Family) -> Option<f64> {
            match f {
                Family::Discrete { atoms } => Some(atoms.iter().map(|(x, p)| x * p).sum()),
                Family::Normal { mean, .. } => Some(*mean),
                Family::Cauchy { .. } => None,
                Family::Uniform { a, b } => Some(0.5 * (a + b)),
                Family::Pareto { shape, scale } => (*shape > 1.0).then(|| shape * scale / (shape - 1.0)),
                Family::PowerSingularity { center, .. } => Some(*center),
                Family::Mixture { weights, components } => {
                    let mut acc = 0.0;
                    for (w, c) in weights.iter().zip(components) {
                        acc += w * go(c)?;
                    }
                    Some(acc)
                }
            }
        }
        go(&self.family)
    }

    /// Whether `E X² < ∞`.
    pub fn has_finite_variance(&self) -> bool {
        fn go(f: &Family) -> bool {
            match f {
                Family::Cauchy { .. } => false,
                Family::Pareto { shape, .. } => *shape > 2.0,
                Family::Mixture { components, .. } => components.iter().all(go),
                _ => true,
            }
        }
        go(&self.family)
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.law.cdf(x)
    }

    /// `P(X < x)`.
    pub fn cdf_before(&self, x: f64) -> f64 {
        self.law.cdf_before(x)
    }

    /// `P(lo <= X <= hi)`.
    pub fn prob_closed(&self, lo: f64, hi: f64) -> f64 {
        self.law.prob_closed(lo, hi)
    }

    /// `P(lo < X < hi)`.
    pub fn prob_open(&self, lo: f64, hi: f64) -> f64 {
        self.law.prob_open(lo, hi)
    }

    /// All atoms with their total mass under `F`, sorted by point.
    /// Coincident atoms of different mixture components are merged.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        self.law.atoms_into(1.0, &mut out);
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(out.len());
        for (x, p) in out {
            match merged.last_mut() {
                Some(last) if last.0 == x => last.1 += p,
                _ => merged.push((x, p)),
            }
        }
        merged
    }

    /// `p_x = P(X = x)`.
    pub fn atom_mass(&self, x: f64) -> f64 {
        self.atoms().iter().filter(|a| a.0 == x).map(|a| a.1).sum()
    }

    pub fn max_atom_mass(&self) -> f64 {
        self.atoms().iter().map(|a| a.1).fold(0.0, f64::max)
    }

    /// True when `F` has a non-vanishing continuous part.
    pub fn has_continuous_component(&self) -> bool {
        self.law.has_continuous()
    }

    /// Atoms of a purely discrete, finite-support law.
    pub fn finite_atoms(&self) -> Option<Vec<(f64, f64)>> {
        (!self.has_continuous_component()).then(|| self.atoms())
    }

    /// Lévy concentration `Q(h) = sup_x P(|X - x| <= h)`.
    pub fn concentration_big_q(&self, h: f64) -> Result<f64> {
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("Q(h) needs finite h >= 0, got {h}")));
        }
        let v = match self.law {
            Law::Discrete { ref points, ref probs, .. } => discrete_big_q(points, probs, h),
            Law::Normal { sd, .. } => erf::erf(h / (sd * SQRT_2)),
            Law::Cauchy { scale, .. } => 2.0 / PI * (h / scale).atan(),
            Law::Uniform { a, b } => (2.0 * h / (b - a)).min(1.0),
            Law::Pareto { shape, scale } => -(-shape * (1.0 + 2.0 * h / scale).ln()).exp_m1(),
            Law::PowerSingularity { beta, w, .. } => (h / w).powf(beta).min(1.0),
            Law::Mixture { .. } => {
                let (lo, hi) = self.law.range_hint();
                let grid = linspace(lo - h, hi + h, BIG_Q_GRID);
                let mut anchors = Vec::new();
                self.law.anchors(&mut anchors);
                for a in self.atoms() {
                    anchors.extend([a.0 - h, a.0 + h]);
                }
                let f = |x: f64| self.law.prob_closed(x - h, x + h);
                grid_maximize(&f, &grid, &anchors, REFINE_TOLERANCE)
            }
        };
        Ok(v.clamp(0.0, 1.0))
    }

    /// Scaled concentration `q(h) = sup_{x != 0} P(|X - x| <= |x| h)`, `0 <= h < 1`.
    pub fn concentration_small_q(&self, h: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&h) {
            return Err(Error::InvalidArgument(format!("q(h) needs 0 <= h < 1, got {h}")));
        }
        if let Law::Discrete { ref points, ref probs, .. } = self.law {
            return Ok(discrete_small_q(points, probs, h));
        }
        let window = |x: f64| self.law.prob_closed(x - x.abs() * h, x + x.abs() * h);
        let mut best = 0.0f64;
        let mut anchors = Vec::new();
        self.law.anchors(&mut anchors);
        for (x, _) in self.atoms() {
            anchors.extend([x / (1.0 + h), x / (1.0 - h)]);
        }
        let extra: Vec<f64> = anchors
            .iter()
            .flat_map(|&a| [a, a / (1.0 + h), a / (1.0 - h)])
            .filter(|a| *a != 0.0 && a.is_finite())
            .collect();
        for sign in [1.0, -1.0] {
            // search in t = ln|x| with the sign fixed
            let f = |t: f64| window(sign * t.exp());
            let grid = linspace(Q_GRID_MIN.ln(), Q_GRID_MAX.ln(), Q_GRID_PER_SIGN);
            let anchor_t: Vec<f64> = extra
                .iter()
                .filter(|a| a.signum() == sign)
                .map(|a| a.abs().ln())
                .collect();
            best = best.max(grid_maximize(&f, &grid, &anchor_t, REFINE_TOLERANCE));
            // anchors also seed local refinement
            for &t in &anchor_t {
                let step = (1.0 + h).ln().max(1e-6);
                best = best.max(golden_max(&f, t - step, t + step, REFINE_TOLERANCE).1);
            }
        }
        Ok(best.clamp(0.0, 1.0))
    }

    /// `q` and `Q` on a grid of `h` values plus their log–log exponents.
    pub fn concentration_profile(&self, h_grid: &[f64]) -> Result<ConcentrationProfile> {
        let q_values = h_grid
            .iter()
            .map(|&h| self.concentration_small_q(h))
            .collect::<Result<Vec<_>>>()?;
        let big_q_values = h_grid
            .iter()
            .map(|&h| self.concentration_big_q(h))
            .collect::<Result<Vec<_>>>()?;
        let fit = |vals: &[f64]| {
            let pts: Vec<(f64, f64)> = h_grid.iter().copied().zip(vals.iter().copied()).collect();
            fit_lambda(&pts).ok()
        };
        Ok(ConcentrationProfile {
            h_grid: h_grid.to_vec(),
            fit_q: fit(&q_values),
            fit_big_q: fit(&big_q_values),
            q_values,
            big_q_values,
            exact: matches!(self.law, Law::Discrete { .. }),
        })
    }

    /// Whether `F` has a bounded density that is eventually monotone in both
    /// tails, which guarantees `q(h) = O(h)`. Decided analytically per family.
    pub fn check_prop4(&self) -> Result<bool> {
        fn go(f: &Family) -> Result<bool> {
            match f {
                Family::Discrete { .. } => Err(Error::Inapplicable(
                    "bounded-density criterion needs an absolutely continuous law".into(),
                )),
                Family::Normal { .. } | Family::Cauchy { .. } | Family::Uniform { .. } | Family::Pareto { .. } => {
                    Ok(true)
                }
                // unbounded density at the centre unless exponent == 1
                Family::PowerSingularity { exponent, .. } => Ok(*exponent == 1.0),
                Family::Mixture { components, .. } => {
                    let mut all = true;
                    for c in components {
                        all &= go(c)?;
                    }
                    Ok(all)
                }
            }
        }
        go(&self.family)
    }

    /// An analytically certified bound `q(h) <= C h^λ`, available for
    /// purely continuous laws. `None` when `F` has atoms.
    pub fn certified_q_bound(&self) -> Option<QBound> {
        fn go(law: &Law) -> Option<QBound> {
            match *law {
                Law::Discrete { .. } => None,
                Law::Normal { .. } | Law::Cauchy { .. } | Law::Uniform { .. } | Law::Pareto { .. } => Some(QBound {
                    exponent: 1.0,
                    constant: None,
                    reason: "bounded density, eventually monotone tails".into(),
                }),
                Law::PowerSingularity { center, beta, w } => {
                    // windows meeting the support have half-width <= 2(|c|+w)h once h <= 1/2,
                    // and Q(s) = (s/w)^β for this law
                    let constant = (2.0 * (center.abs() + w) / w).powf(beta);
                    Some(QBound {
                        exponent: beta,
                        constant: Some(constant),
                        reason: format!("compact support, Q(s) = (s/{w})^{beta}"),
                    })
                }
                Law::Mixture { ref components, .. } => {
                    let bounds: Option<Vec<QBound>> = components.iter().map(go).collect();
                    let bounds = bounds?;
                    let exponent = bounds.iter().map(|b| b.exponent).fold(f64::INFINITY, f64::min);
                    Some(QBound {
                        exponent,
                        constant: None,
                        reason: "mixture: weakest component exponent".into(),
                    })
                }
            }
        }
        go(&self.law)
    }
}

/// Analytic bound `q(h) <= C h^exponent` for small `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QBound {
    pub exponent: f64,
    pub constant: Option<f64>,
    pub reason: String,
}

/// Free-function form of [`DistributionSpec::sample`].
pub fn sample(dist: &DistributionSpec, count: usize, seed: u64) -> Vec<f64> {
    dist.sample(count, seed)
}

pub fn concentration_big_q(dist: &DistributionSpec, h: f64) -> Result<f64> {
    dist.concentration_big_q(h)
}

pub fn concentration_small_q(dist: &DistributionSpec, h: f64) -> Result<f64> {
    dist.concentration_small_q(h)
}

pub fn check_prop4(dist: &DistributionSpec) -> Result<bool> {
    dist.check_prop4()
}

// The optimal closed window of width 2h can always be slid right until an
// atom sits on its left edge.
// each window is summed left to right, so a wider h can never round to a smaller mass
fn discrete_big_q(points: &[f64], probs: &[f64], h: f64) -> f64 {
    let mut best = 0.0f64;
    let mut j = 0;
    for i in 0..points.len() {
        j = j.max(i);
        while j < points.len() && points[j] - points[i] <= 2.0 * h {
            j += 1;
        }
        best = best.max(probs[i..j].iter().sum());
    }
    best.min(1.0)
}

// For x > 0 the atom a is covered exactly when a/(1+h) <= x <= a/(1-h), so the
// best x is the left end of one of those intervals; same for x < 0 by symmetry.
fn discrete_small_q(points: &[f64], probs: &[f64], h: f64) -> f64 {
    let lo = |a: f64| a.abs() / (1.0 + h);
    let hi = |a: f64| a.abs() / (1.0 - h);
    let mut best = 0.0f64;
    for (&aj, _) in points.iter().zip(probs).filter(|(a, _)| **a != 0.0) {
        let x = lo(aj);
        let mass: f64 = points
            .iter()
            .zip(probs)
            .filter(|(ak, _)| **ak != 0.0 && ak.signum() == aj.signum() && lo(**ak) <= x && x <= hi(**ak))
            .map(|(_, p)| p)
            .sum();
        best = best.max(mass);
    }
    best.min(1.0)
}

pub(crate) fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Concentration functions sampled on an `h` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationProfile {
    pub h_grid: Vec<f64>,
    pub q_values: Vec<f64>,
    pub big_q_values: Vec<f64>,
    /// Log–log fit of `q`; absent when some value is zero.
    pub fit_q: Option<LambdaFit>,
    pub fit_big_q: Option<LambdaFit>,
    /// Values are exact (discrete law), not numeric lower bounds.
    pub exact: bool,
}

/// Least-squares fit of `ln v = intercept + slope * ln h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_norm: f64,
    pub slope_stderr: f64,
}

/// Fits the exponent `λ` in `v ≈ C h^λ`.
pub fn fit_lambda(points: &[(f64, f64)]) -> Result<LambdaFit> {
    if points.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "exponent fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    for &(h, v) in points {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::InvalidArgument(format!("exponent fit needs h in (0,1), got {h}")));
        }
        if !(v > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "exponent undefined: nonpositive value {v} at h = {h}"
            )));
        }
    }
    let m = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(LambdaFit {
        slope,
        intercept,
        residual_norm: rss.sqrt(),
        slope_stderr: (rss / (m - 2.0) / sxx).sqrt(),
    })
}

/// `{2^-3, ..., 2^-10}`, the default exponent-fitting grid.
pub fn default_h_grid() -> Vec<f64> {
    (3..=10).map(|k| 2f64.powi(-k)).collect()
}
