//! Monte Carlo engine.
//!
//! Work is cut into fixed blocks of [`BLOCK_SIZE`] draws. Block `b` owns the
//! ChaCha8 stream `(seed, stream_base + b)`, so results are bit-identical
//! for a given seed whatever the thread count, and blocks are merged in
//! index order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::DistributionSpec;
use crate::error::{Error, Result};
use crate::selfnorm::{compute_stats, TStatSummary};

pub const BLOCK_SIZE: usize = 1024;
/// Batches used for batch-means standard errors.
pub const BATCHES: usize = 32;
/// Log–log slope of the running mean above which a moment is flagged.
pub const DIVERGENCE_SLOPE: f64 = 0.05;
/// Smallest sample accepted by [`estimate_moment`].
pub const MIN_MOMENT_SAMPLES: usize = 10_000;

const Z95: f64 = 1.96;

/// RNG for block `block` of the stream family `seed`.
pub fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

/// Runs `f(rng, len)` on every block and concatenates the results in block order.
fn par_blocks<T, F>(count: usize, seed: u64, stream_base: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> Vec<T> + Sync,
{
    let blocks = count.div_ceil(BLOCK_SIZE);
    let parts: Vec<Vec<T>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let len = BLOCK_SIZE.min(count - b * BLOCK_SIZE);
            let mut rng = block_rng(seed, stream_base + b as u64);
            f(&mut rng, len)
        })
        .collect();
    parts.into_iter().flatten().collect()
}

// stream families used by the experiments below; block counts stay far under 2^32
fn stream_base(family: u64) -> u64 {
    family << 32
}

/// `count` independent samples of size `n`, summarized.
pub fn simulate_tstat(dist: &DistributionSpec, n: usize, count: usize, seed: u64) -> Result<Vec<TStatSummary>> {
    simulate_on_stream(dist, n, count, seed, 0)
}

pub(crate) fn simulate_on_stream(
    dist: &DistributionSpec,
    n: usize,
    count: usize,
    seed: u64,
    family: u64,
) -> Result<Vec<TStatSummary>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("count must be >= 1".into()));
    }
    Ok(par_blocks(count, seed, stream_base(family), |rng, len| {
        let mut buf = vec![0.0; n];
        (0..len)
            .map(|_| {
                buf.iter_mut().for_each(|x| *x = dist.draw(rng));
                compute_stats(&buf).expect("finite draws")
            })
            .collect()
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub r: f64,
    pub n: usize,
    pub value: f64,
    pub std_error: f64,
    /// `(sample count, running mean)` at powers of two and at the full count.
    pub prefix_trace: Vec<(usize, f64)>,
    pub divergence_flag: bool,
    pub sample_count: usize,
}

/// Mean of `|t|^r` with a batch-means standard error and a divergence check.
pub fn estimate_moment(summaries: &[TStatSummary], r: f64) -> Result<MomentEstimate> {
    let n = summaries.first().map_or(0, |s| s.n);
    let values: Vec<f64> = summaries.iter().map(|s| s.t_squared.powf(0.5 * r)).collect();
    estimate_mean(&values, n, r)
}

/// As [`estimate_moment`], for precomputed per-sample values `|t|^r`.
pub fn estimate_mean(values: &[f64], n: usize, r: f64) -> Result<MomentEstimate> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("moment order must be > 0, got {r}")));
    }
    let count = values.len();
    if count < MIN_MOMENT_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "moment estimate needs at least {MIN_MOMENT_SAMPLES} samples, got {count}"
        )));
    }
    let mut prefix_trace = Vec::new();
    let mut acc = 0.0;
    let mut next = 1;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        let seen = i + 1;
        if seen == next || seen == count {
            prefix_trace.push((seen, acc / seen as f64));
            if seen == next {
                next *= 2;
            }
        }
    }
    let value = acc / count as f64;
    let std_error = batch_means_se(values);
    let divergence_flag = value > 0.0 && trace_slope(&prefix_trace).is_some_and(|s| s > DIVERGENCE_SLOPE);
    Ok(MomentEstimate { r, n, value, std_error, prefix_trace, divergence_flag, sample_count: count })
}

fn batch_means_se(values: &[f64]) -> f64 {
    let size = values.len() / BATCHES;
    let means: Vec<f64> = (0..BATCHES)
        .map(|b| {
            let end = if b + 1 == BATCHES { values.len() } else { (b + 1) * size };
            let chunk = &values[b * size..end];
            chunk.iter().sum::<f64>() / chunk.len() as f64
        })
        .collect();
    let m = means.iter().sum::<f64>() / BATCHES as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    (var / BATCHES as f64).sqrt()
}

/// OLS slope of `ln(running mean)` on `ln(count)` over the last half of the trace.
fn trace_slope(trace: &[(usize, f64)]) -> Option<f64> {
    let tail: Vec<(f64, f64)> = trace[trace.len() / 2..]
        .iter()
        .filter(|p| p.1 > 0.0)
        .map(|&(c, m)| ((c as f64).ln(), m.ln()))
        .collect();
    if tail.len() < 3 {
        return None;
    }
    let k = tail.len() as f64;
    let mx = tail.iter().map(|p| p.0).sum::<f64>() / k;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMethod {
    Hill,
    LoglogRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailIndexEstimate {
    pub index: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub k: usize,
    pub method: TailMethod,
}

/// `⌊√N⌋`, clamped into the admissible range `[50, N/10]` when possible.
pub fn default_tail_k(len: usize) -> usize {
    ((len as f64).sqrt() as usize).clamp(50, (len / 10).max(50))
}

/// Tail index of `|values|` from the top `k` order statistics.
pub fn estimate_tail_index(values: &[f64], k: usize, method: TailMethod) -> Result<TailIndexEstimate> {
    if k < 50 || k > values.len() / 10 {
        return Err(Error::InvalidArgument(format!(
            "tail index needs 50 <= k <= len/10, got k = {k} for {} values",
            values.len()
        )));
    }
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).filter(|&v| v > 0.0).collect();
    if abs.len() <= k {
        return Err(Error::NotEnoughTailData { positive: abs.len(), k });
    }
    abs.sort_by(|a, b| b.total_cmp(a));
    let index = match method {
        TailMethod::Hill => {
            let threshold = abs[k].ln();
            let mean_excess = abs[..k].iter().map(|x| x.ln() - threshold).sum::<f64>() / k as f64;
            if mean_excess <= 0.0 {
                return Err(Error::Inapplicable("top order statistics are tied".into()));
            }
            1.0 / mean_excess
        }
        TailMethod::LoglogRegression => {
            // ln P(|T| > x_(i)) ≈ ln(i/N) against ln x_(i)
            let total = values.len() as f64;
            let pts: Vec<(f64, f64)> = abs[..k]
                .iter()
                .enumerate()
                .map(|(i, x)| (x.ln(), ((i + 1) as f64 / total).ln()))
                .collect();
            let m = k as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            if sxx <= 0.0 {
                return Err(Error::Inapplicable("top order statistics are tied".into()));
            }
            -sxy / sxx
        }
    };
    let half = Z95 / (k as f64).sqrt();
    Ok(TailIndexEstimate {
        index,
        ci_low: index * (1.0 - half),
        ci_high: index * (1.0 + half),
        k,
        method,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// Plain frequency of the event.
    Direct,
    /// Draw `X₁ = x`, the rest from `F` restricted to the window that must
    /// contain them on the event, and average `F(window)^(n-1) · 1{event}`.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearDegeneracyPoint {
    pub h: f64,
    /// Estimate of `P(n - U* < h²)`.
    pub probability: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Samples on which the event occurred.
    pub hits: usize,
    pub count: usize,
}

/// Relative half-width `κ` with `κ²/(2+2κ+κ²) = h²`.
///
/// If some `|x_i - x₁| >= κ|x₁|` then `n - u* >= h²`, so on the event every
/// observation lies in the open window `(x₁ - κ|x₁|, x₁ + κ|x₁|)`.
pub fn window_factor(h: f64) -> f64 {
    let h2 = h * h;
    (h2 + h * (2.0 - h2).sqrt()) / (1.0 - h2)
}

/// Estimates `P(n - U* < h²)` for each `h` of a sorted grid in `(0, 1)`.
pub fn near_degeneracy_probe(
    dist: &DistributionSpec,
    n: usize,
    h_grid: &[f64],
    count: usize,
    seed: u64,
    mode: ProbeMode,
) -> Result<Vec<NearDegeneracyPoint>> {
    if h_grid.is_empty() || h_grid.iter().any(|h| !(*h > 0.0 && *h < 1.0)) {
        return Err(Error::InvalidArgument("h grid must be nonempty inside (0, 1)".into()));
    }
    if h_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("h grid must be sorted".into()));
    }
    let nf = n as f64;
    match mode {
        ProbeMode::Direct => {
            let sims = simulate_on_stream(dist, n, count, seed, 1)?;
            Ok(h_grid
                .iter()
                .map(|&h| {
                    let hits = sims.iter().filter(|s| nf - s.u_star < h * h).count();
                    let (lo, hi) = wilson(hits, count);
                    NearDegeneracyPoint { h, probability: hits as f64 / count as f64, ci_low: lo, ci_high: hi, hits, count }
                })
                .collect())
        }
        ProbeMode::Stratified => {
            if n < 2 || count == 0 {
                return Err(Error::InvalidArgument("need n >= 2 and count >= 1".into()));
            }
            h_grid
                .iter()
                .enumerate()
                .map(|(i, &h)| {
                    let kappa = window_factor(h);
                    let vals = par_blocks(count, seed, stream_base(2 + i as u64), |rng, len| {
                        let mut buf = vec![0.0; n];
                        (0..len).map(|_| stratified_draw(dist, n, h, kappa, &mut buf, rng)).collect()
                    });
                    let mean = vals.iter().sum::<f64>() / count as f64;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count.max(2) - 1) as f64;
                    let se = (var / count as f64).sqrt();
                    Ok(NearDegeneracyPoint {
                        h,
                        probability: mean,
                        ci_low: (mean - Z95 * se).max(0.0),
                        ci_high: (mean + Z95 * se).min(1.0),
                        hits: vals.iter().filter(|&&v| v > 0.0).count(),
                        count,
                    })
                })
                .collect()
        }
    }
}

fn stratified_draw<R: Rng + ?Sized>(
    dist: &DistributionSpec,
    n: usize,
    h: f64,
    kappa: f64,
    buf: &mut [f64],
    rng: &mut R,
) -> f64 {
    let x = dist.draw(rng);
    if x == 0.0 {
        // a zero coordinate caps u* at n - 1
        return 0.0;
    }
    let (lo, hi) = (x - kappa * x.abs(), x + kappa * x.abs());
    let mass = dist.prob_open(lo, hi);
    if mass <= 0.0 {
        return 0.0;
    }
    buf[0] = x;
    for slot in buf[1..].iter_mut() {
        match dist.draw_within(lo, hi, rng) {
            Some(v) => *slot = v,
            None => return 0.0,
        }
    }
    let s = compute_stats(buf).expect("finite draws");
    if (n as f64) - s.u_star < h * h {
        mass.powi(n as i32 - 1)
    } else {
        0.0
    }
}

/// Wilson score interval at 95%.
pub fn wilson(hits: usize, count: usize) -> (f64, f64) {
    let nf = count as f64;
    let p = hits as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubGaussianReport {
    pub n_list: Vec<usize>,
    pub t_grid: Vec<f64>,
    /// `mgf[i][j]` estimates `E exp(t_j S/V)` at `n_list[i]`.
    pub mgf: Vec<Vec<f64>>,
    pub std_error: Vec<Vec<f64>>,
    /// Smallest `C >= 0` with `mgf <= 2 exp(C t²)` at each `n`.
    pub c_per_n: Vec<f64>,
    /// Largest of `c_per_n`.
    pub c: f64,
    pub envelope_holds: bool,
}

/// Empirical moment generating function of `S/V` on an `(n, t)` grid.
pub fn subgaussian_probe(
    dist: &DistributionSpec,
    n_list: &[usize],
    t_grid: &[f64],
    count: usize,
    seed: u64,
) -> Result<SubGaussianReport> {
    if n_list.is_empty() || t_grid.is_empty() {
        return Err(Error::InvalidArgument("n list and t grid must be nonempty".into()));
    }
    if let Some(t) = t_grid.iter().find(|t| !(t.abs() <= 3.0)) {
        return Err(Error::InvalidArgument(format!("|t| must be <= 3, got {t}")));
    }
    let mut mgf = Vec::new();
    let mut std_error = Vec::new();
    let mut c_per_n = Vec::new();
    for (i, &n) in n_list.iter().enumerate() {
        let sims = simulate_on_stream(dist, n, count, seed, 1000 + i as u64)?;
        let ratios: Vec<f64> = sims.iter().map(TStatSummary::self_normalized).collect();
        let mut row = Vec::with_capacity(t_grid.len());
        let mut se_row = Vec::with_capacity(t_grid.len());
        let mut c_n = 0.0f64;
        for &t in t_grid {
            let vals: Vec<f64> = ratios.iter().map(|&s| (t * s).exp()).collect();
            let m = vals.iter().sum::<f64>() / count as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (count.max(2) - 1) as f64;
            row.push(m);
            se_row.push((var / count as f64).sqrt());
            if t != 0.0 {
                c_n = c_n.max((0.5 * m).ln() / (t * t));
            }
        }
        mgf.push(row);
        std_error.push(se_row);
        c_per_n.push(c_n);
    }
    let c = c_per_n.iter().copied().fold(0.0, f64::max);
    // slack of a few ulps for the exp/ln round trip
    let envelope_holds = mgf
        .iter()
        .all(|row| row.iter().zip(t_grid).all(|(&m, &t)| m <= 2.0 * (c * t * t).exp() * (1.0 + 1e-12)));
    Ok(SubGaussianReport { n_list: n_list.to_vec(), t_grid: t_grid.to_vec(), mgf, std_error, c_per_n, c, envelope_holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate_partition, QuadOptions};

    #[test]
    fn degenerate_law_gives_zero_t() {
        let d = DistributionSpec::discrete(vec![(1.0, 1.0)]).unwrap();
        let s = simulate_tstat(&d, 3, 100, 5).unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.iter().all(|x| x.t == 0.0));
    }

    #[test]
    fn normal_pair_is_cauchy() {
        let d = DistributionSpec::normal(0.0, 1.0).unwrap();
        let s = simulate_tstat(&d, 2, 1_000_000, 11).unwrap();
        let frac = s.iter().filter(|x| x.t.abs() > 1.0).count() as f64 / s.len() as f64;
        assert!((frac - 0.5).abs() < 0.003, "{frac}");
    }

    #[test]
    fn uniform_ranges() {
        let d = DistributionSpec::uniform(0.0, 1.0).unwrap();
        let s = simulate_tstat(&d, 5, 100_000, 2).unwrap();
        assert!(s.iter().all(|x| x.t.is_finite() && (0.0..=5.0).contains(&x.u_star)));
    }

    #[test]
    fn simulation_is_deterministic_and_block_aligned() {
        let d = DistributionSpec::cauchy(0.0, 1.0).unwrap();
        let a = simulate_tstat(&d, 4, 3000, 77).unwrap();
        let b = simulate_tstat(&d, 4, 3000, 77).unwrap();
        assert_eq!(a, b);
        // a shorter run is a prefix of a longer one
        let c = simulate_tstat(&d, 4, 1500, 77).unwrap();
        assert_eq!(&a[..1500], &c[..]);
    }

    #[test]
    fn zero_values_do_not_diverge() {
        let e = estimate_mean(&vec![0.0; 20_000], 2, 1.0).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(!e.divergence_flag);
        assert!(estimate_mean(&[1.0; 10], 2, 1.0).is_err());
    }

    #[test]
    fn trace_is_increasing() {
        let e = estimate_mean(&vec![1.0; 50_000], 2, 1.0).unwrap();
        assert!(e.prefix_trace.windows(2).all(|w| w[1].0 > w[0].0));
        assert_eq!(e.prefix_trace.last().unwrap().0, 50_000);
        assert!(!e.divergence_flag);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn t3_absolute_mean() {
        // E|t₂| = √2
        let d = DistributionSpec::normal(0.0, 1.0).unwrap();
        let s = simulate_tstat(&d, 3, 1_000_000, 21).unwrap();
        let e = estimate_moment(&s, 1.0).unwrap();
        assert!((e.value - 2f64.sqrt()).abs() < 3.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn cauchy_mean_flags_divergence() {
        let d = DistributionSpec::normal(0.0, 1.0).unwrap();
        let s = simulate_tstat(&d, 2, 1_000_000, 3).unwrap();
        assert!(estimate_moment(&s, 1.0).unwrap().divergence_flag);
    }

    #[test]
    fn hill_on_exact_pareto() {
        let d = DistributionSpec::pareto(2.0, 1.0).unwrap();
        let xs = d.sample(1_000_000, 8);
        let est = estimate_tail_index(&xs, 10_000, TailMethod::Hill).unwrap();
        assert!((1.9..=2.1).contains(&est.index), "{est:?}");
        assert!(est.ci_low <= est.index && est.index <= est.ci_high);
        let ll = estimate_tail_index(&xs, 10_000, TailMethod::LoglogRegression).unwrap();
        assert!((1.8..=2.2).contains(&ll.index), "{ll:?}");
    }

    #[test]
    fn tail_index_argument_checks() {
        assert!(estimate_tail_index(&[1.0; 100], 49, TailMethod::Hill).is_err());
        let mut v = vec![0.0; 1000];
        v[0] = 1.0;
        assert!(matches!(
            estimate_tail_index(&v, 50, TailMethod::Hill),
            Err(Error::NotEnoughTailData { .. })
        ));
    }

    #[test]
    fn window_factor_solves_bound() {
        for h in [0.01, 0.3, 0.9] {
            let k = window_factor(h);
            assert!((k * k / (2.0 + 2.0 * k + k * k) - h * h).abs() < 1e-14);
        }
    }

    // P((x - y)² < h²(x² + y²)) for x, y ~ U(0,1): the inner y-set is an
    // interval between the roots of a quadratic, integrated in x
    fn uniform_pair_oracle(h: f64) -> f64 {
        let a = 1.0 - h * h;
        let root = (1.0 - a * a).sqrt();
        let inner = |x: f64| {
            let lo = x * (1.0 - root) / a;
            let hi = (x * (1.0 + root) / a).min(1.0);
            (hi - lo).max(0.0)
        };
        let kink = a / (1.0 + root);
        integrate_partition(inner, &[0.0, kink, 1.0], QuadOptions { rel_tol: 1e-12, ..Default::default() }).value
    }

    #[test]
    fn near_degeneracy_uniform_pair() {
        let d = DistributionSpec::uniform(0.0, 1.0).unwrap();
        let exact = uniform_pair_oracle(0.5);
        let direct = near_degeneracy_probe(&d, 2, &[0.5], 1_000_000, 4, ProbeMode::Direct).unwrap();
        assert!(direct[0].ci_low <= exact && exact <= direct[0].ci_high, "{direct:?} vs {exact}");
        let strat = near_degeneracy_probe(&d, 2, &[0.5], 200_000, 4, ProbeMode::Stratified).unwrap();
        assert!(strat[0].ci_low <= exact && exact <= strat[0].ci_high, "{strat:?} vs {exact}");
    }

    #[test]
    fn near_degeneracy_degenerate_law() {
        let d = DistributionSpec::discrete(vec![(1.0, 1.0)]).unwrap();
        for mode in [ProbeMode::Direct, ProbeMode::Stratified] {
            let p = near_degeneracy_probe(&d, 3, &[0.1, 0.5], 10_000, 1, mode).unwrap();
            assert!(p.iter().all(|x| x.probability == 0.0));
        }
    }

    #[test]
    fn subgaussian_zero_column_and_symmetry() {
        let d = DistributionSpec::normal(0.0, 1.0).unwrap();
        let rep = subgaussian_probe(&d, &[2, 5], &[-1.0, 0.0, 1.0], 100_000, 9).unwrap();
        for (row, se) in rep.mgf.iter().zip(&rep.std_error) {
            assert_eq!(row[1], 1.0);
            assert!((row[0] - row[2]).abs() < 3.0 * (se[0] * se[0] + se[2] * se[2]).sqrt());
        }
        assert!(rep.envelope_holds);
        assert!(rep.c <= 1.0);
    }
}
