use serde::Serialize;

use crate::error::{Error, Result};
use crate::linop::{square_dim, LinearOperator};
use crate::solvers::lanczos;

use super::probes::{probe, ProbeDistribution};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityOptions {
    /// Independent Lanczos runs `k`.
    pub runs: usize,
    /// Lanczos steps `m` per run.
    pub steps: usize,
    /// Kernel width; defaults to `(θ_max − θ_min) / (2m)` over all Ritz values.
    pub sigma: Option<f64>,
    pub grid_points: usize,
    pub seed: u64,
}

impl DensityOptions {
    pub fn new(runs: usize, steps: usize, seed: u64) -> Self {
        Self {
            runs,
            steps,
            sigma: None,
            grid_points: 1024,
            seed,
        }
    }
}

/// Ritz nodes and weights of one Lanczos run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RitzRun {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralDensity {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub sigma: f64,
    pub runs: Vec<RitzRun>,
}

impl SpectralDensity {
    /// Trapezoidal integral of the density over the grid.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// `Σ_j w_j N(x; μ_j, σ²)` on every grid point.
pub fn gaussian_mixture(nodes: &[f64], weights: &[f64], sigma: f64, grid: &[f64]) -> Vec<f64> {
    let c = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&x| {
            nodes
                .iter()
                .zip(weights)
                .map(|(&mu, &w)| w * c * (-0.5 * ((x - mu) / sigma).powi(2)).exp())
                .sum()
        })
        .collect()
}

/// Uniform grid covering `[lo − 5σ, hi + 5σ]`.
pub fn density_grid(lo: f64, hi: f64, sigma: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo - 5.0 * sigma, hi + 5.0 * sigma);
    let step = (b - a) / (points - 1) as f64;
    (0..points).map(|i| a + step * i as f64).collect()
}

fn ritz_runs(op: &dyn LinearOperator, opts: &DensityOptions) -> Result<Vec<RitzRun>> {
    let n = square_dim(op)?;
    if opts.runs == 0 {
        return Err(Error::contract("need at least one Lanczos run"));
    }
    if opts.steps == 0 || opts.steps > n {
        return Err(Error::contract(format!(
            "Lanczos steps must be in 1..={n}, got {}",
            opts.steps
        )));
    }
    if opts.grid_points < 2 {
        return Err(Error::contract("density grid needs at least two points"));
    }
    (0..opts.runs)
        .map(|r| {
            let start = probe(ProbeDistribution::Normal, n, opts.seed, r as u64);
            let f = lanczos(op, &start, opts.steps, true)?;
            let (nodes, weights) = f.ritz();
            Ok(RitzRun { nodes, weights })
        })
        .collect()
}

fn smooth(
    runs: Vec<RitzRun>,
    steps: usize,
    sigma: Option<f64>,
    points: usize,
) -> Result<SpectralDensity> {
    let all = runs.iter().flat_map(|r| r.nodes.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
        (a.min(x), b.max(x))
    });
    let sigma = match sigma {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => {
            return Err(Error::contract(format!(
                "kernel width must be positive, got {s}"
            )))
        }
        None => {
            let scale = lo.abs().max(hi.abs()).max(1.0);
            // All Ritz values equal up to rounding: use a width relative to their size.
            if hi - lo > 1e-10 * scale {
                (hi - lo) / (2 * steps) as f64
            } else {
                1e-3 * scale
            }
        }
    };
    let grid = density_grid(lo, hi, sigma, points);
    let k = runs.len() as f64;
    let mut density = vec![0.0; grid.len()];
    for run in &runs {
        for (d, v) in
            density
                .iter_mut()
                .zip(gaussian_mixture(&run.nodes, &run.weights, sigma, &grid))
        {
            *d += v / k;
        }
    }
    Ok(SpectralDensity {
        grid,
        density,
        sigma,
        runs,
    })
}

/// Spectral density from Ritz values and weights of `runs` Lanczos runs,
/// each smoothed with a Gaussian kernel.
pub fn spectral_density(op: &dyn LinearOperator, opts: &DensityOptions) -> Result<SpectralDensity> {
    let runs = ritz_runs(op, opts)?;
    smooth(runs, opts.steps, opts.sigma, opts.grid_points)
}

/// Density of `ν = log(|λ| + ε)`: Ritz values are mapped before smoothing.
pub fn log_spectral_density(
    op: &dyn LinearOperator,
    opts: &DensityOptions,
    eps: f64,
) -> Result<SpectralDensity> {
    if !(eps > 0.0) {
        return Err(Error::contract(format!("ε must be positive, got {eps}")));
    }
    let runs = ritz_runs(op, opts)?
        .into_iter()
        .map(|r| RitzRun {
            nodes: r.nodes.iter().map(|t| (t.abs() + eps).ln()).collect(),
            weights: r.weights,
        })
        .collect();
    smooth(runs, opts.steps, opts.sigma, opts.grid_points)
}
