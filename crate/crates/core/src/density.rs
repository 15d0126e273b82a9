//! Ulam discretization of the transfer operator, orbit histograms and
//! Lyapunov integrals: an acip oracle independent of the inducing pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::maps::IntervalMap;
use crate::thermo::EquilibriumMeasure;

pub const ULAM_SAMPLES: usize = 64;
pub const ULAM_TOLERANCE: f64 = 1e-10;
pub const ULAM_MAX_ITER: usize = 10_000;
pub const DEFAULT_SEED: u64 = 0x7e4d_2b11;

/// A probability density on [0,1], piecewise constant on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    pub values: Vec<f64>,
}

impl GridDensity {
    /// Normalizes nonnegative bin values so that `Σ v · h = 1`.
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("density needs at least one bin".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("density values must be finite and nonnegative".into()));
        }
        let h = 1.0 / values.len() as f64;
        let total: f64 = values.iter().sum::<f64>() * h;
        if total <= 0.0 {
            return Err(Error::InvalidArgument("density has zero mass".into()));
        }
        for v in values.iter_mut() {
            *v /= total;
        }
        Ok(Self { values })
    }

    pub fn uniform(bins: usize) -> Self {
        Self { values: vec![1.0; bins] }
    }

    /// Bin averages of the density with cumulative distribution `cdf`.
    pub fn from_cdf<F: Fn(f64) -> f64>(bins: usize, cdf: F) -> Result<Self> {
        let n = bins as f64;
        Self::from_values((0..bins).map(|j| (cdf((j + 1) as f64 / n) - cdf(j as f64 / n)) * n).collect())
    }

    /// `1/(π√(x(1-x)))`, the acip density of `4x(1-x)`, averaged per bin.
    pub fn arcsine(bins: usize) -> Self {
        Self::from_cdf(bins, |x| std::f64::consts::FRAC_2_PI * x.sqrt().asin()).expect("arcsine density is valid")
    }

    /// Histogram masses of a measure divided by the bin width. Atoms are
    /// rejected since they have no density.
    pub fn from_measure(mu: &EquilibriumMeasure) -> Result<Self> {
        if !mu.atoms.is_empty() {
            return Err(Error::InvalidArgument("measure has atoms and no density".into()));
        }
        Self::from_values(mu.density())
    }

    pub fn bins(&self) -> usize {
        self.values.len()
    }

    pub fn bin_width(&self) -> f64 {
        1.0 / self.values.len() as f64
    }

    pub fn bin_left(&self, j: usize) -> f64 {
        j as f64 / self.values.len() as f64
    }

    /// Histogram measure with the same bins.
    pub fn to_measure(&self, map: &IntervalMap, t: f64) -> EquilibriumMeasure {
        let h = self.bin_width();
        EquilibriumMeasure::from_histogram(map, t, self.values.iter().map(|v| v * h).collect())
    }

    /// Merges groups of `factor` adjacent bins.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.bins() % factor != 0 {
            return Err(Error::Resolution { left: self.bins(), right: factor });
        }
        Self::from_values(self.values.chunks(factor).map(|c| c.iter().sum::<f64>() / factor as f64).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UlamOptions {
    pub samples: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for UlamOptions {
    fn default() -> Self {
        Self { samples: ULAM_SAMPLES, seed: DEFAULT_SEED, tolerance: ULAM_TOLERANCE, max_iter: ULAM_MAX_ITER }
    }
}

/// Sparse row-stochastic Ulam matrix.
#[derive(Clone, Debug)]
pub struct UlamMatrix {
    pub rows: Vec<Vec<(u32, f64)>>,
}

impl UlamMatrix {
    pub fn build(map: &IntervalMap, bins: usize, opts: &UlamOptions) -> Self {
        let n = bins as f64;
        let s = opts.samples.max(1);
        let rows = (0..bins)
            .into_par_iter()
            .map(|i| {
                // one stream per row keeps the matrix independent of scheduling
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(i as u64);
                let mut hits: Vec<u32> = (0..s)
                    .map(|k| {
                        let u: f64 = rng.gen();
                        let x = (i as f64 + (k as f64 + u) / s as f64) / n;
                        let y = map.eval(x).clamp(0.0, 1.0);
                        ((y * n) as usize).min(bins - 1) as u32
                    })
                    .collect();
                hits.sort_unstable();
                let mut row: Vec<(u32, f64)> = Vec::new();
                for j in hits {
                    match row.last_mut() {
                        Some((last, c)) if *last == j => *c += 1.0,
                        _ => row.push((j, 1.0)),
                    }
                }
                for e in row.iter_mut() {
                    e.1 /= s as f64;
                }
                row
            })
            .collect();
        Self { rows }
    }

    /// Largest deviation of a row sum from 1.
    pub fn stochasticity_error(&self) -> f64 {
        self.rows.iter().map(|r| (r.iter().map(|e| e.1).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `v ↦ vP`.
    pub fn left_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (row, &vi) in self.rows.iter().zip(v) {
            if vi == 0.0 {
                continue;
            }
            for &(j, p) in row {
                out[j as usize] += vi * p;
            }
        }
        out
    }
}

pub fn ulam(map: &IntervalMap, bins: usize) -> Result<GridDensity> {
    ulam_with(map, bins, &UlamOptions::default())
}

/// Stationary left vector of the Ulam matrix by normalized power iteration.
pub fn ulam_with(map: &IntervalMap, bins: usize, opts: &UlamOptions) -> Result<GridDensity> {
    if bins < 16 {
        return Err(Error::InvalidArgument(format!("Ulam needs at least 16 bins, got {bins}")));
    }
    let matrix = UlamMatrix::build(map, bins, opts);
    let mut v = vec![1.0 / bins as f64; bins];
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let mut next = matrix.left_apply(&v);
        let total: f64 = next.iter().sum();
        for x in next.iter_mut() {
            *x /= total;
        }
        change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if change < opts.tolerance {
            return GridDensity::from_values(v);
        }
    }
    Err(Error::UlamNotConverged { iterations: opts.max_iter, change })
}

/// Histogram density of the orbit of `x0` after a burn-in.
pub fn orbit_histogram(map: &IntervalMap, x0: f64, burn_in: usize, points: usize, bins: usize) -> Result<GridDensity> {
    if !(0.0..=1.0).contains(&x0) {
        return Err(Error::OutsideDomain { x: x0, left: 0.0, right: 1.0 });
    }
    let n = bins as f64;
    let mut counts = vec![0.0; bins];
    let mut x = x0;
    for _ in 0..burn_in {
        x = map.eval(x).clamp(0.0, 1.0);
    }
    for _ in 0..points {
        counts[((x * n) as usize).min(bins - 1)] += 1.0;
        x = map.eval(x).clamp(0.0, 1.0);
    }
    GridDensity::from_values(counts)
}

/// `∫|a - b| dx`.
pub fn l1_distance(a: &GridDensity, b: &GridDensity) -> Result<f64> {
    if a.bins() != b.bins() {
        return Err(Error::Resolution { left: a.bins(), right: b.bins() });
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() * a.bin_width())
}

/// `∫ log|Df| ρ dx` by the bin-centre rule, skipping bins whose centre is
/// inside the critical clearance and renormalizing the rest.
pub fn lyapunov(map: &IntervalMap, dens: &GridDensity) -> f64 {
    let h = dens.bin_width();
    let (mut num, mut mass) = (0.0, 0.0);
    for (j, &v) in dens.values.iter().enumerate() {
        let x = (j as f64 + 0.5) * h;
        if v == 0.0 || map.near_critical(x).is_some() {
            continue;
        }
        num += v * h * map.deriv1(x).abs().ln();
        mass += v * h;
    }
    num / mass
}

/// `∫ φ_t dμ = -t λ(μ)`.
pub fn potential_integral(map: &IntervalMap, dens: &GridDensity, t: f64) -> f64 {
    -t * lyapunov(map, dens)
}
