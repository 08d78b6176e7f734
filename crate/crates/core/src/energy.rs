//! The Hamiltonian contract shared by analytic systems and learned models.

use crate::error::{Error, Result};
use crate::phase::PhaseState;
use crate::rng::RngStream;

/// A Hamiltonian `H(q, p)` with its partial gradients.
///
/// Implementations with [`EnergyFunction::is_separable`] returning `true` promise
/// `H = T(p) + V(q)`: `grad_q` ignores `p` and `grad_p` ignores `q`. The
/// leapfrog integrator relies on that.
pub trait EnergyFunction: Send + Sync {
    /// Degrees of freedom `n`.
    fn dim(&self) -> usize;

    fn energy(&self, s: &PhaseState) -> Result<f64>;

    /// `∂H/∂q`
    fn grad_q(&self, s: &PhaseState) -> Result<Vec<f64>>;

    /// `∂H/∂p`
    fn grad_p(&self, s: &PhaseState) -> Result<Vec<f64>>;

    fn is_separable(&self) -> bool;

    /// The Hamiltonian vector field `(∂H/∂p, −∂H/∂q)`.
    fn vector_field(&self, s: &PhaseState) -> Result<(Vec<f64>, Vec<f64>)> {
        let dq = self.grad_p(s)?;
        let dp = self.grad_q(s)?.into_iter().map(|g| -g).collect();
        Ok((dq, dp))
    }
}

impl<T: EnergyFunction + ?Sized> EnergyFunction for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn energy(&self, s: &PhaseState) -> Result<f64> {
        (**self).energy(s)
    }
    fn grad_q(&self, s: &PhaseState) -> Result<Vec<f64>> {
        (**self).grad_q(s)
    }
    fn grad_p(&self, s: &PhaseState) -> Result<Vec<f64>> {
        (**self).grad_p(s)
    }
    fn is_separable(&self) -> bool {
        (**self).is_separable()
    }
}

impl<T: EnergyFunction + ?Sized> EnergyFunction for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn energy(&self, s: &PhaseState) -> Result<f64> {
        (**self).energy(s)
    }
    fn grad_q(&self, s: &PhaseState) -> Result<Vec<f64>> {
        (**self).grad_q(s)
    }
    fn grad_p(&self, s: &PhaseState) -> Result<Vec<f64>> {
        (**self).grad_p(s)
    }
    fn is_separable(&self) -> bool {
        (**self).is_separable()
    }
}

/// Worst relative error between the analytic gradients of `h` at `s` and
/// central differences of `h.energy` with the given step. The error of each
/// component is `|analytic − numeric| / max(1, |numeric|)`.
pub fn gradient_check<H: EnergyFunction + ?Sized>(h: &H, s: &PhaseState, step: f64) -> Result<f64> {
    let n = s.dim();
    let gq = h.grad_q(s)?;
    let gp = h.grad_p(s)?;
    let analytic: Vec<f64> = gq.into_iter().chain(gp).collect();
    let x = s.concat();
    let mut worst = 0.0f64;
    for i in 0..2 * n {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[i] += step;
        minus[i] -= step;
        let fp = h.energy(&PhaseState::split(&plus)?)?;
        let fm = h.energy(&PhaseState::split(&minus)?)?;
        let numeric = (fp - fm) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Uniform random state in `[-half_width, half_width]^{2n}`.
pub fn random_state(rng: &mut RngStream, n: usize, half_width: f64) -> PhaseState {
    let mut draw = || rng.uniform_range(-half_width, half_width);
    let q: Vec<f64> = (0..n).map(|_| draw()).collect();
    let p: Vec<f64> = (0..n).map(|_| draw()).collect();
    PhaseState::from_parts_unchecked(q, p)
}

pub(crate) fn require_separable<H: EnergyFunction + ?Sized>(h: &H) -> Result<()> {
    if h.is_separable() {
        Ok(())
    } else {
        Err(Error::invalid("leapfrog requires a separable Hamiltonian H = T(p) + V(q)"))
    }
}
