//! Gaussian kernel density estimate of z and the cumulative-root boundary rule
//! used by the SQRT and CBRT stratifiers.

use thiserror::Error;

use crate::dataset::StratVariable;
use crate::par::{self, Execution};

pub const DEFAULT_GRID_SIZE: usize = 1024;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("degenerate stratification variable: fewer than two distinct values")]
    Degenerate,
    #[error("bandwidth must be positive and finite, got {0}")]
    Bandwidth(f64),
    #[error("grid needs at least 2 points, got {0}")]
    GridSize(usize),
    #[error("grid must be strictly increasing and match the density length")]
    Grid,
    #[error("density values must be finite and nonnegative with positive mass")]
    Density,
    #[error("K = {k} exceeds the {cells} grid cells")]
    TooManyStrata { k: usize, cells: usize },
    #[error("K must be at least 1")]
    ZeroStrata,
    #[error("root exponent must be in (0, 1], got {0}")]
    Exponent(f64),
}

/// A density tabulated on an increasing grid, normalized to unit trapezoidal
/// mass over the grid span.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    grid: Vec<f64>,
    density: Vec<f64>,
    bandwidth: Option<f64>,
}

impl DensityModel {
    /// Builds a model from tabulated values; the density is rescaled so that it
    /// integrates to one over the grid.
    pub fn from_grid(grid: Vec<f64>, density: Vec<f64>) -> Result<Self, DensityError> {
        if grid.len() < 2 {
            return Err(DensityError::GridSize(grid.len()));
        }
        if grid.len() != density.len() || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DensityError::Grid);
        }
        if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(DensityError::Density);
        }
        let mass = trapezoid(&grid, &density);
        if !(mass > 0.0) {
            return Err(DensityError::Density);
        }
        let density = density.into_iter().map(|d| d / mass).collect();
        Ok(Self {
            grid,
            density,
            bandwidth: None,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Kernel bandwidth, when the model came from [`fit_kde`].
    pub fn bandwidth(&self) -> Option<f64> {
        self.bandwidth
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    pub fn cells(&self) -> usize {
        self.grid.len() - 1
    }

    /// Grid location of the density maximum.
    pub fn mode(&self) -> f64 {
        let (i, _) = self
            .density
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        self.grid[i]
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

/// Linear-interpolated quantile (the usual "type 7" definition) of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule of thumb, 1.06 * min(sd, IQR / 1.34) * N^(-1/5).
///
/// When the IQR collapses to zero (more than half the mass on one value) the
/// standard deviation alone is used.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    1.06 * spread * n.powf(-0.2)
}

pub fn fit_kde(
    z: &StratVariable,
    bandwidth: Option<f64>,
    grid_size: usize,
) -> Result<DensityModel, DensityError> {
    fit_kde_with(z, bandwidth, grid_size, Execution::default())
}

pub fn fit_kde_with(
    z: &StratVariable,
    bandwidth: Option<f64>,
    grid_size: usize,
    execution: Execution,
) -> Result<DensityModel, DensityError> {
    if grid_size < 2 {
        return Err(DensityError::GridSize(grid_size));
    }
    let values = z.values();
    let (lo, hi) = (z.min(), z.max());
    if values.len() < 2 || !(hi > lo) {
        return Err(DensityError::Degenerate);
    }
    let h = match bandwidth {
        Some(h) if h.is_finite() && h > 0.0 => h,
        Some(h) => return Err(DensityError::Bandwidth(h)),
        None => silverman_bandwidth(values),
    };

    let step = (hi - lo) / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| if i + 1 == grid_size { hi } else { lo + step * i as f64 })
        .collect();
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = par::map_indexed(grid_size, execution, |i| {
        let x = grid[i];
        norm * values
            .iter()
            .map(|&v| {
                let u = (x - v) / h;
                (-0.5 * u * u).exp()
            })
            .sum::<f64>()
    });

    // Kernel mass beyond [min z, max z] is folded back in by renormalizing.
    let mut model = DensityModel::from_grid(grid, density)?;
    model.bandwidth = Some(h);
    Ok(model)
}

/// Points where the running integral of f(z)^exponent crosses k/K of its
/// total, for k = 1..K-1 (exponent 1/2 gives the cum-sqrt(f) rule, 1/3 the
/// cube-root rule).
pub fn root_cumulative_boundaries(
    model: &DensityModel,
    k: usize,
    exponent: f64,
) -> Result<Vec<f64>, DensityError> {
    if k == 0 {
        return Err(DensityError::ZeroStrata);
    }
    if !(exponent > 0.0 && exponent <= 1.0) {
        return Err(DensityError::Exponent(exponent));
    }
    if k > model.cells() {
        return Err(DensityError::TooManyStrata {
            k,
            cells: model.cells(),
        });
    }
    let grid = &model.grid;
    let root: Vec<f64> = model.density.iter().map(|d| d.powf(exponent)).collect();

    let mut cumulative = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for i in 1..grid.len() {
        acc += 0.5 * (grid[i] - grid[i - 1]) * (root[i] + root[i - 1]);
        cumulative.push(acc);
    }
    let total = acc;

    let mut boundaries = Vec::with_capacity(k - 1);
    let mut cell = 1;
    for j in 1..k {
        let target = total * j as f64 / k as f64;
        while cell < grid.len() - 1 && cumulative[cell] < target {
            cell += 1;
        }
        let (c0, c1) = (cumulative[cell - 1], cumulative[cell]);
        let frac = if c1 > c0 { ((target - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.0 };
        boundaries.push(grid[cell - 1] + frac * (grid[cell] - grid[cell - 1]));
    }
    Ok(boundaries)
}
