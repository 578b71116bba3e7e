//! Mean-one volatility multipliers with separable spatio-temporal correlation.
//!
//! A Gaussian panel `Y0 = A X B` (X iid standard normal) has covariance
//! `Σ1 ⊗ Σ2` when `Σ1 = A Aᵀ` and `Σ2 = Bᵀ B`. We take `A` as the lower
//! Cholesky factor of `Σ1` and `B` as the transpose of the lower Cholesky
//! factor of `Σ2`. The multipliers are `Y = exp(Y0) + 1 − exp(Σ_ii / 2)`,
//! whose expectation is exactly one, clipped below at a small floor.
//!
//! Panels are reproducible for a fixed seed on one platform. Across platforms
//! `exp` may differ in the last ulp, so bit-identity is not promised there.

use std::io::Write;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_recon::haversine_km;
use crate::seeds::{self, Rng};

/// Largest `N·T` for which the explicit Kronecker covariance may be built.
pub const KRONECKER_CAP: usize = 10_000;

const JITTER_DOUBLINGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub alpha: f64,
    /// Spatial length scale in km.
    pub sigma_km: f64,
    /// Temporal decay per period.
    pub theta: f64,
    pub clip_floor: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            alpha: 0.01,
            sigma_km: 1.0,
            theta: 1.0,
            clip_floor: 1e-6,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("sigma", self.sigma_km), ("theta", self.theta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Invalid(format!("kernel parameter {name} must be positive, got {v}")));
            }
        }
        if !(self.clip_floor >= 0.0) {
            return Err(Error::Invalid(format!("clip floor must be nonnegative, got {}", self.clip_floor)));
        }
        Ok(())
    }

    /// The `alpha` whose multipliers have marginal standard deviation `std`.
    pub fn alpha_for_std(std: f64) -> f64 {
        // Var = e^α (e^α − 1); solve the quadratic in e^α.
        ((1.0 + (1.0 + 4.0 * std * std).sqrt()) / 2.0).ln()
    }

    /// Marginal standard deviation of a multiplier before clipping.
    pub fn marginal_std(&self) -> f64 {
        (self.alpha.exp() * (self.alpha.exp() - 1.0)).sqrt()
    }
}

/// RBF kernel `α exp(−D²/(2σ²))` over a pairwise distance matrix.
pub fn spatial_kernel(d: &DMatrix<f64>, alpha: f64, sigma_km: f64) -> Result<DMatrix<f64>> {
    if !d.is_square() {
        return Err(Error::Invalid(format!("distance matrix is {}x{}", d.nrows(), d.ncols())));
    }
    let n = d.nrows();
    for i in 0..n {
        if d[(i, i)] != 0.0 {
            return Err(Error::Invalid(format!("distance matrix has nonzero diagonal at {i}")));
        }
        for j in 0..i {
            let (a, b) = (d[(i, j)], d[(j, i)]);
            if !(a >= 0.0) || !a.is_finite() {
                return Err(Error::Invalid(format!("distance ({i}, {j}) = {a} is negative or not finite")));
            }
            if (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
                return Err(Error::Invalid(format!("distance matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let two_s2 = 2.0 * sigma_km * sigma_km;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let dij = 0.5 * (d[(i, j)] + d[(j, i)]);
        alpha * (-dij * dij / two_s2).exp()
    }))
}

/// Exponential kernel `exp(−θ|i − j|)` over `t` consecutive periods.
pub fn temporal_kernel(t: usize, theta: f64) -> DMatrix<f64> {
    DMatrix::from_fn(t, t, |i, j| (-theta * i.abs_diff(j) as f64).exp())
}

/// Pairwise great-circle distances between (lat, lon) points.
pub fn distance_matrix(coords: &[(f64, f64)]) -> DMatrix<f64> {
    let n = coords.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = haversine_km(coords[i], coords[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Lower Cholesky factor, adding diagonal jitter `1e-10·trace/n`, doubled
/// up to eight times, when the plain factorization fails.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if let Some(c) = m.clone().cholesky() {
        return Ok(c.l());
    }
    let trace = m.trace();
    if trace == 0.0 && m.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    let mut jitter = 1e-10 * trace.abs() / n as f64;
    for attempt in 0..=JITTER_DOUBLINGS {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = shifted.cholesky() {
            log::debug!("cholesky needed jitter {jitter:e} (attempt {})", attempt + 1);
            return Ok(c.l());
        }
        jitter *= 2.0;
    }
    Err(Error::Factorization {
        attempts: JITTER_DOUBLINGS + 1,
    })
}

/// `Σ1 ⊗ Σ2`, the covariance of `vec` of the panel in row-major order
/// (component-major, then period). Refused above [`KRONECKER_CAP`].
pub fn kronecker_covariance(sigma1: &DMatrix<f64>, sigma2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let size = sigma1.nrows() * sigma2.nrows();
    if size > KRONECKER_CAP {
        return Err(Error::SizeLimit {
            size,
            cap: KRONECKER_CAP,
        });
    }
    Ok(sigma1.kronecker(sigma2))
}

/// Factored sampler for repeated draws with fixed kernels.
#[derive(Debug, Clone)]
pub struct PanelSampler {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    /// `exp(Σ_ii / 2)` per entry, computed from the factors actually used.
    shift: DMatrix<f64>,
    clip_floor: f64,
}

impl PanelSampler {
    pub fn new(sigma1: &DMatrix<f64>, sigma2: &DMatrix<f64>, clip_floor: f64) -> Result<Self> {
        let a = cholesky_with_jitter(sigma1)?;
        let b = cholesky_with_jitter(sigma2)?.transpose();
        let s1: Vec<f64> = (0..a.nrows()).map(|i| a.row(i).norm_squared()).collect();
        let s2: Vec<f64> = (0..b.ncols()).map(|t| b.column(t).norm_squared()).collect();
        let shift = DMatrix::from_fn(s1.len(), s2.len(), |i, t| (0.5 * s1[i] * s2[t]).exp());
        Ok(PanelSampler { a, b, shift, clip_floor })
    }

    pub fn components(&self) -> usize {
        self.a.nrows()
    }

    pub fn periods(&self) -> usize {
        self.b.ncols()
    }

    /// One Gaussian draw `Y0 = A X B`.
    pub fn draw_gaussian(&self, rng: &mut Rng) -> DMatrix<f64> {
        let (n, t) = (self.components(), self.periods());
        let mut x = DMatrix::zeros(n, t);
        for i in 0..n {
            for j in 0..t {
                x[(i, j)] = StandardNormal.sample(rng);
            }
        }
        &self.a * x * &self.b
    }

    /// Unclipped mean-one multipliers from a Gaussian draw.
    pub fn transform(&self, y0: &DMatrix<f64>) -> DMatrix<f64> {
        y0.zip_map(&self.shift, |g, s| g.exp() + 1.0 - s)
    }

    /// One multiplier panel and the number of clipped entries.
    pub fn draw(&self, rng: &mut Rng) -> (DMatrix<f64>, usize) {
        let mut y = self.transform(&self.draw_gaussian(rng));
        let mut clipped = 0;
        for v in y.iter_mut() {
            if *v < self.clip_floor {
                *v = self.clip_floor;
                clipped += 1;
            }
        }
        (y, clipped)
    }
}

/// An N×T multiplier panel, rows in component order.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityPanel {
    pub values: DMatrix<f64>,
    pub seed: u64,
    pub config: KernelConfig,
    pub clipped: usize,
}

pub fn sample_panel(
    sigma1: &DMatrix<f64>,
    sigma2: &DMatrix<f64>,
    config: &KernelConfig,
    seed: u64,
) -> Result<VolatilityPanel> {
    let sampler = PanelSampler::new(sigma1, sigma2, config.clip_floor)?;
    let (values, clipped) = sampler.draw(&mut seeds::rng(seed));
    if clipped > 0 {
        log::info!(
            "clipped {clipped} of {} multipliers at {}",
            values.len(),
            config.clip_floor
        );
    }
    Ok(VolatilityPanel {
        values,
        seed,
        config: *config,
        clipped,
    })
}

/// Samples a long horizon as independent chunks of `chunk_periods` periods,
/// each from its own derived seed. Correlation across chunk boundaries is
/// dropped; within a chunk it follows the kernels exactly.
pub fn sample_horizon(
    distances: &DMatrix<f64>,
    periods: usize,
    chunk_periods: usize,
    config: &KernelConfig,
    seed: u64,
) -> Result<VolatilityPanel> {
    config.validate()?;
    if chunk_periods == 0 {
        return Err(Error::Invalid("chunk length must be positive".into()));
    }
    let sigma1 = spatial_kernel(distances, config.alpha, config.sigma_km)?;
    let n = sigma1.nrows();
    let chunks: Vec<(usize, usize)> = (0..periods)
        .step_by(chunk_periods)
        .map(|s| (s, chunk_periods.min(periods - s)))
        .collect();

    let full = PanelSampler::new(&sigma1, &temporal_kernel(chunk_periods, config.theta), config.clip_floor)?;
    let tail = match chunks.last() {
        Some(&(_, len)) if len != chunk_periods => Some(PanelSampler::new(
            &sigma1,
            &temporal_kernel(len, config.theta),
            config.clip_floor,
        )?),
        _ => None,
    };

    let parts: Vec<(DMatrix<f64>, usize)> = chunks
        .par_iter()
        .enumerate()
        .map(|(k, &(_, len))| {
            let sampler = if len == chunk_periods { &full } else { tail.as_ref().expect("tail sampler") };
            sampler.draw(&mut seeds::rng(seeds::derive_seed(seed, "stsample-chunk", k as u64)))
        })
        .collect();

    let mut values = DMatrix::zeros(n, periods);
    let mut clipped = 0;
    for (&(start, len), (part, c)) in chunks.iter().zip(parts) {
        values.columns_mut(start, len).copy_from(&part);
        clipped += c;
    }
    if clipped > 0 {
        log::info!("clipped {clipped} of {} multipliers at {}", values.len(), config.clip_floor);
    }
    Ok(VolatilityPanel {
        values,
        seed,
        config: *config,
        clipped,
    })
}

pub fn write_panel_csv(panel: &VolatilityPanel, component_ids: &[u32], mut out: impl Write) -> Result<()> {
    if component_ids.len() != panel.values.nrows() {
        return Err(Error::Invalid(format!(
            "{} component ids for a panel of {} rows",
            component_ids.len(),
            panel.values.nrows()
        )));
    }
    let io = |e| Error::io("panel csv", e);
    writeln!(out, "component_id,period,multiplier").map_err(io)?;
    for (i, id) in component_ids.iter().enumerate() {
        for t in 0..panel.values.ncols() {
            writeln!(out, "{id},{t},{}", panel.values[(i, t)]).map_err(io)?;
        }
    }
    Ok(())
}
