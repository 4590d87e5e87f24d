//! Survival functions `z ↦ P(U* > z)` on `[0, n)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A survival function of `U*` for samples of size `n`.
pub trait Survival {
    fn n(&self) -> usize;
    /// `P(U* > z)`.
    fn survival(&self, z: f64) -> f64;
    /// Points in `[0, n)` where the function may fail to be smooth.
    fn breakpoints(&self) -> Vec<f64>;
    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

/// Grid-sampled survival function, linear between grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub n: usize,
    pub z_grid: Vec<f64>,
    pub survival: Vec<f64>,
    /// Half-width of the pointwise 95% normal-approximation interval.
    pub half_width95: Vec<f64>,
    pub sample_count: usize,
}

/// Grid points per region of [`SurvivalCurve::default_grid`].
const GRID_POINTS: usize = 1024;

impl SurvivalCurve {
    /// Uniform in `z` on `[0, n/2]`, then uniform in `ln h` for `z = n - h²`
    /// down to `h = n^-4`, so the approach to `n` is resolved.
    pub fn default_grid(n: usize) -> Vec<f64> {
        let nf = n as f64;
        let mut grid: Vec<f64> = (0..GRID_POINTS).map(|i| 0.5 * nf * i as f64 / GRID_POINTS as f64).collect();
        let h_hi = (0.5 * nf).sqrt();
        let h_lo = h_min(n);
        let (l_hi, l_lo) = (h_hi.ln(), h_lo.ln());
        for i in 0..=GRID_POINTS {
            let h = (l_hi + (l_lo - l_hi) * i as f64 / GRID_POINTS as f64).exp();
            let z = nf - h * h;
            // for large n the last few levels round to n itself
            if z < nf && z > *grid.last().unwrap() {
                grid.push(z);
            }
        }
        grid
    }

    /// Empirical survival of the given `u*` values on the default grid.
    pub fn from_ustar(n: usize, u_values: &[f64]) -> Result<Self> {
        Self::from_ustar_on(n, u_values, Self::default_grid(n))
    }

    pub fn from_ustar_on(n: usize, u_values: &[f64], z_grid: Vec<f64>) -> Result<Self> {
        if u_values.is_empty() {
            return Err(Error::InvalidArgument("survival curve needs at least one value".into()));
        }
        let mut sorted = u_values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let total = sorted.len() as f64;
        let mut survival = Vec::with_capacity(z_grid.len());
        let mut half_width95 = Vec::with_capacity(z_grid.len());
        for &z in &z_grid {
            let above = sorted.len() - sorted.partition_point(|&u| u <= z);
            let s = above as f64 / total;
            survival.push(s);
            half_width95.push(1.96 * (s * (1.0 - s) / total).sqrt());
        }
        let curve = Self { n, z_grid, survival, half_width95, sample_count: sorted.len() };
        curve.validate()?;
        Ok(curve)
    }
}

impl Survival for SurvivalCurve {
    fn n(&self) -> usize {
        self.n
    }

    fn survival(&self, z: f64) -> f64 {
        let g = &self.z_grid;
        if z <= g[0] {
            return self.survival[0];
        }
        let i = g.partition_point(|&x| x <= z);
        if i >= g.len() {
            return self.survival[g.len() - 1];
        }
        let (z0, z1) = (g[i - 1], g[i]);
        let (s0, s1) = (self.survival[i - 1], self.survival[i]);
        s0 + (s1 - s0) * (z - z0) / (z1 - z0)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.z_grid.clone()
    }

    fn validate(&self) -> Result<()> {
        let nf = self.n as f64;
        if self.n < 2 {
            return Err(Error::InvalidSurvival(format!("n = {} < 2", self.n)));
        }
        if self.z_grid.is_empty() || self.z_grid.len() != self.survival.len() {
            return Err(Error::InvalidSurvival("grid and values differ in length".into()));
        }
        if self.z_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSurvival("grid not strictly increasing".into()));
        }
        if self.z_grid[0] < 0.0 || *self.z_grid.last().unwrap() >= nf {
            return Err(Error::InvalidSurvival(format!("grid leaves [0, {nf})")));
        }
        if self.survival.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidSurvival("value outside [0, 1]".into()));
        }
        if let Some(i) = self.survival.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::InvalidSurvival(format!(
                "increases between z = {} and z = {}",
                self.z_grid[i],
                self.z_grid[i + 1]
            )));
        }
        Ok(())
    }
}

/// Survival of a `U*` law with finitely many values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSurvival {
    pub n: usize,
    /// `(value, probability)`, sorted by value, values distinct.
    pub masses: Vec<(f64, f64)>,
}

impl StepSurvival {
    /// Collects `(value, probability)` pairs, merging equal values.
    pub fn new(n: usize, mut masses: Vec<(f64, f64)>) -> Self {
        masses.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(masses.len());
        for (u, p) in masses {
            match merged.last_mut() {
                Some(last) if last.0 == u => last.1 += p,
                _ => merged.push((u, p)),
            }
        }
        Self { n, masses: merged }
    }
}

impl Survival for StepSurvival {
    fn n(&self) -> usize {
        self.n
    }

    fn survival(&self, z: f64) -> f64 {
        let k = self.masses.partition_point(|m| m.0 <= z);
        self.masses[k..].iter().map(|m| m.1).sum::<f64>().min(1.0)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.masses.iter().map(|m| m.0).filter(|&u| u < self.n as f64).collect()
    }
}

/// Lower cut-off `n^-4` of `h = √(n - z)` used when integrating near `z = n`.
pub fn h_min(n: usize) -> f64 {
    (n as f64).powi(-4)
}
