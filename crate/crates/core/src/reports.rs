//! Evaluation metrics and the plain-data files they are written to.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::energy::EnergyFunction;
use crate::error::{check_dim, Error, Result};
use crate::phase::Trajectory;

/// Per-step values aggregated over one or more trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MetricSeries {
    /// Mean and population standard deviation at each step across `runs`.
    pub fn aggregate(name: impl Into<String>, runs: &[Vec<f64>]) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::invalid("no series to aggregate"))?;
        let len = first.len();
        for r in runs {
            check_dim(len, r.len())?;
        }
        let n = runs.len() as f64;
        let mean: Vec<f64> = (0..len).map(|t| runs.iter().map(|r| r[t]).sum::<f64>() / n).collect();
        let std = (0..len)
            .map(|t| (runs.iter().map(|r| (r[t] - mean[t]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Ok(Self {
            name: name.into(),
            mean,
            std,
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Mean of the per-step means.
    pub fn overall_mean(&self) -> f64 {
        if self.mean.is_empty() {
            0.0
        } else {
            self.mean.iter().sum::<f64>() / self.mean.len() as f64
        }
    }
}

/// Squared error per step, averaged over the `2n` phase-space coordinates.
pub fn per_step_errors(predicted: &Trajectory, target: &Trajectory) -> Result<Vec<f64>> {
    check_dim(target.len(), predicted.len())?;
    check_dim(target.dim(), predicted.dim())?;
    Ok(predicted
        .states()
        .iter()
        .zip(target.states())
        .map(|(a, b)| {
            let (x, y) = (a.concat(), b.concat());
            let n = x.len().max(1) as f64;
            x.iter().zip(&y).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / n
        })
        .collect())
}

pub fn per_step_mse(predicted: &Trajectory, target: &Trajectory) -> Result<MetricSeries> {
    MetricSeries::aggregate("mse", &[per_step_errors(predicted, target)?])
}

/// Population variance of `H` over the states of `traj`.
pub fn hamiltonian_variance<H: EnergyFunction + ?Sized>(h: &H, traj: &Trajectory) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::invalid("hamiltonian_variance of an empty trajectory"));
    }
    let energies = traj.states().iter().map(|s| h.energy(s)).collect::<Result<Vec<_>>>()?;
    Ok(population_variance(&energies))
}

pub fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// A regular grid of cell centres over `[x_min, x_max] × [y_min, y_max]`.
/// Point `(ix, iy)` is stored at index `iy·nx + ix`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2d {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid2d {
    pub fn square(half_width: f64, n: usize) -> Self {
        Self {
            x_min: -half_width,
            x_max: half_width,
            y_min: -half_width,
            y_max: half_width,
            nx: n,
            ny: n,
        }
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, index: usize) -> [f64; 2] {
        let (ix, iy) = (index % self.nx, index / self.nx);
        [
            self.x_min + (ix as f64 + 0.5) * self.dx(),
            self.y_min + (iy as f64 + 0.5) * self.dy(),
        ]
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    /// Midpoint-rule integral of grid values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.cell_area()
    }
}

/// Isotropic Gaussian kernel density estimate of 2-D `samples` at every grid
/// point.
pub fn kde_grid(samples: &[[f64; 2]], bandwidth: f64, grid: &Grid2d) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("kde_grid needs at least one sample"));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::invalid("kde bandwidth must be positive"));
    }
    let norm = 1.0 / (2.0 * PI * bandwidth * bandwidth * samples.len() as f64);
    let inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    Ok(grid
        .points()
        .map(|[x, y]| {
            norm * samples
                .iter()
                .map(|[sx, sy]| (-((x - sx).powi(2) + (y - sy).powi(2)) * inv2h2).exp())
                .sum::<f64>()
        })
        .collect())
}

/// Total-variation distance `½ ∫|a − b|` between two densities on the same
/// grid.
pub fn total_variation(a: &[f64], b: &[f64], grid: &Grid2d) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    Ok(0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * grid.cell_area())
}

/// Kolmogorov–Smirnov statistic of `samples` against `U(lo, hi)`.
pub fn ks_statistic_uniform(samples: &[f64], lo: f64, hi: f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let cdf = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            let above = (i as f64 + 1.0) / n - cdf;
            let below = cdf - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic two-sided 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// `mse.csv`: `step,mean,std`.
pub fn write_mse_csv(path: impl AsRef<Path>, series: &MetricSeries) -> Result<()> {
    let mut w = create(path.as_ref())?;
    writeln!(w, "step,mean,std")?;
    for (t, (m, s)) in series.mean.iter().zip(&series.std).enumerate() {
        writeln!(w, "{t},{m:e},{s:e}")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub split: String,
    pub system: String,
    pub integrator: String,
    pub variance: f64,
}

/// `hvar.csv`: `split,system,integrator,variance`. Values are raw variances;
/// the leading comment says so, since published tables often scale them.
pub fn write_hvar_csv(path: impl AsRef<Path>, rows: &[VarianceRow]) -> Result<()> {
    let mut w = create(path.as_ref())?;
    writeln!(w, "# variance of H along rollouts, unscaled (multiply by 1e4 for x1e-4 units)")?;
    writeln!(w, "split,system,integrator,variance")?;
    for r in rows {
        writeln!(w, "{},{},{},{:e}", r.split, r.system, r.integrator, r.variance)?;
    }
    w.flush()?;
    Ok(())
}

/// Grid values as `x,y,<value_name>` rows.
pub fn write_grid_csv(path: impl AsRef<Path>, grid: &Grid2d, value_name: &str, values: &[f64]) -> Result<()> {
    check_dim(grid.len(), values.len())?;
    let mut w = create(path.as_ref())?;
    writeln!(w, "x,y,{value_name}")?;
    for (i, v) in values.iter().enumerate() {
        let [x, y] = grid.point(i);
        writeln!(w, "{x},{y},{v:e}")?;
    }
    w.flush()?;
    Ok(())
}

/// `kde.csv`: `x,y,density`.
pub fn write_kde_csv(path: impl AsRef<Path>, grid: &Grid2d, density: &[f64]) -> Result<()> {
    write_grid_csv(path, grid, "density", density)
}

/// 8-bit binary PGM heatmap, linearly rescaled from min to max. Row 0 of the
/// image is the top (largest `y`).
pub fn write_pgm(path: impl AsRef<Path>, grid: &Grid2d, values: &[f64]) -> Result<()> {
    check_dim(grid.len(), values.len())?;
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut w = create(path.as_ref())?;
    write!(w, "P5\n{} {}\n255\n", grid.nx, grid.ny)?;
    let mut bytes = Vec::with_capacity(grid.len());
    for row in (0..grid.ny).rev() {
        for col in 0..grid.nx {
            let v = values[row * grid.nx + col];
            let b = if v.is_finite() { ((v - lo) / span * 255.0).round() as u8 } else { 0 };
            bytes.push(b);
        }
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}
