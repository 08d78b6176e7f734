use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

use super::objective::log_sum_exp;

/// Synthetic target densities for the density-modelling experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    /// One-dimensional, equal-weight modes at ±2 with std 0.3.
    Mixture2,
    /// Two-dimensional, modes at the corners of a square of side 4 with
    /// std 0.3. A stand-in: the exact multi-mode dataset is not pinned down.
    Mixture4,
    /// All samples at the origin of a one-dimensional space.
    PointMass,
}

impl DensityKind {
    pub fn name(self) -> &'static str {
        match self {
            DensityKind::Mixture2 => "mixture2",
            DensityKind::Mixture4 => "mixture4",
            DensityKind::PointMass => "point_mass",
        }
    }

    pub fn target(self) -> GaussianMixture {
        match self {
            DensityKind::Mixture2 => GaussianMixture::new(vec![vec![-2.0], vec![2.0]], 0.3).expect("valid"),
            DensityKind::Mixture4 => GaussianMixture::new(
                vec![vec![-2.0, -2.0], vec![-2.0, 2.0], vec![2.0, -2.0], vec![2.0, 2.0]],
                0.3,
            )
            .expect("valid"),
            DensityKind::PointMass => GaussianMixture::new(vec![vec![0.0]], 0.0).expect("valid"),
        }
    }
}

impl FromStr for DensityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "mixture2" => Ok(Self::Mixture2),
            "mixture4" => Ok(Self::Mixture4),
            "point_mass" => Ok(Self::PointMass),
            _ => Err(Error::invalid(format!("unknown density '{s}'"))),
        }
    }
}

/// Equal-weight isotropic Gaussian mixture. A zero `std` gives point masses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    means: Vec<Vec<f64>>,
    std: f64,
}

impl GaussianMixture {
    pub fn new(means: Vec<Vec<f64>>, std: f64) -> Result<Self> {
        let d = means.first().ok_or_else(|| Error::invalid("mixture needs a component"))?.len();
        for m in &means {
            check_dim(d, m.len())?;
        }
        if !(std >= 0.0 && std.is_finite()) {
            return Err(Error::invalid("mixture std must be non-negative"));
        }
        Ok(Self { means, std })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn sample(&self, rng: &mut RngStream, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let k = ((rng.uniform() * self.means.len() as f64) as usize).min(self.means.len() - 1);
                self.means[k].iter().map(|m| m + self.std * rng.standard_normal()).collect()
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        if self.std == 0.0 {
            return Err(Error::invalid("point masses have no density"));
        }
        let var = self.std * self.std;
        let norm = -0.5 * self.dim() as f64 * (2.0 * PI * var).ln() - (self.means.len() as f64).ln();
        let logs: Vec<f64> = self
            .means
            .iter()
            .map(|m| norm - m.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * var))
            .collect();
        Ok(log_sum_exp(&logs))
    }

    /// Average negative log-density of `xs`.
    pub fn mean_nll(&self, xs: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for x in xs {
            total -= self.log_density(x)?;
        }
        Ok(total / xs.len() as f64)
    }
}
