//! Euler, RK4 and leapfrog steppers and rollouts.
//!
//! Every stepper takes a signed `dt`; running time backward is just a
//! negative step. Leapfrog is the kick-drift-kick form
//!
//! ```text
//! p½ = p − (dt/2)·∂V/∂q(q)
//! q' = q + dt·∂T/∂p(p½)
//! p' = p½ − (dt/2)·∂V/∂q(q')
//! ```
//!
//! which is symmetric in time, so a step with `−dt` undoes a step with `dt`
//! exactly (up to rounding).

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::energy::{require_separable, EnergyFunction};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{determinant, jacobian_central};
use crate::phase::{IntegratorId, PhaseState, Trajectory};

/// Step size used throughout unless configured otherwise.
pub const DEFAULT_DT: f64 = 0.125;

/// Largest number of degrees of freedom accepted by [`jacobian_determinant`].
pub const MAX_JACOBIAN_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    Euler,
    Rk4,
    Leapfrog,
}

impl IntegratorKind {
    pub fn id(self) -> IntegratorId {
        match self {
            IntegratorKind::Euler => IntegratorId::Euler,
            IntegratorKind::Rk4 => IntegratorId::Rk4,
            IntegratorKind::Leapfrog => IntegratorId::Leapfrog,
        }
    }

    pub fn name(self) -> &'static str {
        self.id().name()
    }
}

impl fmt::Display for IntegratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IntegratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(IntegratorKind::Euler),
            "rk4" => Ok(IntegratorKind::Rk4),
            "leapfrog" => Ok(IntegratorKind::Leapfrog),
            other => Err(Error::invalid(format!("unknown integrator '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub kind: IntegratorKind,
    pub dt: f64,
    pub n_steps: usize,
}

impl IntegratorSpec {
    pub fn new(kind: IntegratorKind, dt: f64, n_steps: usize) -> Self {
        Self { kind, dt, n_steps }
    }

    pub fn validate_for<H: EnergyFunction + ?Sized>(&self, h: &H) -> Result<()> {
        if self.dt == 0.0 || !self.dt.is_finite() {
            return Err(Error::invalid("integrator dt must be finite and nonzero"));
        }
        if self.kind == IntegratorKind::Leapfrog {
            require_separable(h)?;
        }
        Ok(())
    }
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

fn finite_or(step: usize, s: PhaseState) -> Result<PhaseState> {
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::Numerical {
            step,
            detail: "state became non-finite".into(),
        })
    }
}

/// One explicit Euler step: `q' = q + dt·∂H/∂p`, `p' = p − dt·∂H/∂q`.
pub fn euler_step<H: EnergyFunction + ?Sized>(h: &H, s: &PhaseState, dt: f64) -> Result<PhaseState> {
    check_dim(h.dim(), s.dim())?;
    let gq = h.grad_q(s)?;
    let gp = h.grad_p(s)?;
    let q = axpy(s.q(), dt, &gp);
    let p = axpy(s.p(), -dt, &gq);
    finite_or(0, PhaseState::from_parts_unchecked(q, p))
}

/// One kick-drift-kick leapfrog step. Rejects non-separable Hamiltonians.
pub fn leapfrog_step<H: EnergyFunction + ?Sized>(h: &H, s: &PhaseState, dt: f64) -> Result<PhaseState> {
    require_separable(h)?;
    check_dim(h.dim(), s.dim())?;
    let force = h.grad_q(s)?;
    let (next, _) = leapfrog_with_force(h, s, &force, dt)?;
    finite_or(0, next)
}

/// Leapfrog step given `∂V/∂q` at the current position. Returns the new state
/// and `∂V/∂q` at the new position so consecutive steps share it.
fn leapfrog_with_force<H: EnergyFunction + ?Sized>(
    h: &H,
    s: &PhaseState,
    force: &[f64],
    dt: f64,
) -> Result<(PhaseState, Vec<f64>)> {
    let half = 0.5 * dt;
    let p_half = axpy(s.p(), -half, force);
    // separable: ∂H/∂p depends only on p, so the q slot is irrelevant.
    let drift = h.grad_p(&PhaseState::from_parts_unchecked(s.q().to_vec(), p_half.clone()))?;
    let q = axpy(s.q(), dt, &drift);
    let next_force = h.grad_q(&PhaseState::from_parts_unchecked(q.clone(), p_half.clone()))?;
    let p = axpy(&p_half, -half, &next_force);
    Ok((PhaseState::from_parts_unchecked(q, p), next_force))
}

/// One classical fourth-order Runge-Kutta step on `(∂H/∂p, −∂H/∂q)`.
pub fn rk4_step<H: EnergyFunction + ?Sized>(h: &H, s: &PhaseState, dt: f64) -> Result<PhaseState> {
    check_dim(h.dim(), s.dim())?;
    let field = |q: Vec<f64>, p: Vec<f64>| h.vector_field(&PhaseState::from_parts_unchecked(q, p));
    let (k1q, k1p) = field(s.q().to_vec(), s.p().to_vec())?;
    let (k2q, k2p) = field(axpy(s.q(), 0.5 * dt, &k1q), axpy(s.p(), 0.5 * dt, &k1p))?;
    let (k3q, k3p) = field(axpy(s.q(), 0.5 * dt, &k2q), axpy(s.p(), 0.5 * dt, &k2p))?;
    let (k4q, k4p) = field(axpy(s.q(), dt, &k3q), axpy(s.p(), dt, &k3p))?;
    let combine = |x: &[f64], k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64]| -> Vec<f64> {
        (0..x.len())
            .map(|i| x[i] + dt * (k1[i] / 6.0 + k2[i] / 3.0 + k3[i] / 3.0 + k4[i] / 6.0))
            .collect()
    };
    let q = combine(s.q(), &k1q, &k2q, &k3q, &k4q);
    let p = combine(s.p(), &k1p, &k2p, &k3p, &k4p);
    finite_or(0, PhaseState::from_parts_unchecked(q, p))
}

pub fn step<H: EnergyFunction + ?Sized>(kind: IntegratorKind, h: &H, s: &PhaseState, dt: f64) -> Result<PhaseState> {
    match kind {
        IntegratorKind::Euler => euler_step(h, s, dt),
        IntegratorKind::Rk4 => rk4_step(h, s, dt),
        IntegratorKind::Leapfrog => leapfrog_step(h, s, dt),
    }
}

/// `n_steps + 1` states starting at `s0`. A non-finite state aborts with
/// [`Error::Numerical`] carrying the 1-based index of the failing step.
pub fn rollout<H: EnergyFunction + ?Sized>(h: &H, s0: &PhaseState, spec: &IntegratorSpec) -> Result<Trajectory> {
    spec.validate_for(h)?;
    check_dim(h.dim(), s0.dim())?;
    let mut states = Vec::with_capacity(spec.n_steps + 1);
    states.push(s0.clone());
    let tag = |step: usize, e: Error| match e {
        Error::Numerical { detail, .. } => Error::Numerical { step, detail },
        Error::Singularity(detail) => Error::Numerical { step, detail },
        other => other,
    };
    match spec.kind {
        IntegratorKind::Leapfrog => {
            let mut force = h.grad_q(s0).map_err(|e| tag(1, e))?;
            for i in 1..=spec.n_steps {
                let cur = states.last().unwrap();
                let (next, f) = leapfrog_with_force(h, cur, &force, spec.dt).map_err(|e| tag(i, e))?;
                states.push(finite_or(i, next)?);
                force = f;
            }
        }
        kind => {
            for i in 1..=spec.n_steps {
                let next = step(kind, h, states.last().unwrap(), spec.dt).map_err(|e| tag(i, e))?;
                states.push(next);
            }
        }
    }
    Trajectory::new(states, spec.dt, spec.kind.id())
}

/// Ground-truth rollout: RK4 with `substeps` sub-steps per `dt`, sampled
/// every `dt`.
pub fn reference_rollout<H: EnergyFunction + ?Sized>(
    h: &H,
    s0: &PhaseState,
    dt: f64,
    n_steps: usize,
    substeps: usize,
) -> Result<Trajectory> {
    if dt == 0.0 || !dt.is_finite() || substeps == 0 {
        return Err(Error::invalid("reference rollout needs nonzero dt and substeps"));
    }
    check_dim(h.dim(), s0.dim())?;
    let h_sub = dt / substeps as f64;
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(s0.clone());
    let mut cur = s0.clone();
    for i in 1..=n_steps {
        for _ in 0..substeps {
            cur = rk4_step(h, &cur, h_sub).map_err(|e| match e {
                Error::Numerical { detail, .. } | Error::Singularity(detail) => Error::Numerical { step: i, detail },
                other => other,
            })?;
        }
        states.push(cur.clone());
    }
    Trajectory::new(states, dt, IntegratorId::Reference)
}

/// Determinant of the Jacobian of one integrator step at `s`, from a dense
/// central-difference Jacobian with step `1e-6`. A unit determinant means the
/// step preserves phase-space volume.
pub fn jacobian_determinant<H: EnergyFunction + ?Sized>(
    h: &H,
    s: &PhaseState,
    kind: IntegratorKind,
    dt: f64,
) -> Result<f64> {
    if s.dim() > MAX_JACOBIAN_DIM {
        return Err(Error::invalid(format!(
            "jacobian_determinant supports at most {MAX_JACOBIAN_DIM} degrees of freedom, got {}",
            s.dim()
        )));
    }
    check_dim(h.dim(), s.dim())?;
    if dt == 0.0 {
        return Ok(1.0);
    }
    let map = |x: &[f64]| -> Result<Vec<f64>> {
        let st = PhaseState::from_parts_unchecked(x[..x.len() / 2].to_vec(), x[x.len() / 2..].to_vec());
        Ok(step(kind, h, &st, dt)?.concat())
    };
    let x = s.concat();
    let (jac, _) = jacobian_central(map, &x, 1e-6)?;
    Ok(determinant(&jac, x.len()))
}
