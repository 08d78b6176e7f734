use crate::diffgraph::{Tape, Var};
use crate::error::{check_dim, Error, Result};
use crate::integrators::{rollout, IntegratorKind, IntegratorSpec};
use crate::models::{BoundHamiltonian, Checkpoint, SeparableHamiltonianModel};
use crate::phase::PhaseState;
use crate::rng::RngStream;

use super::prior::PriorSpec;

/// A composition of leapfrog-integrated Hamiltonians, each applied for
/// `leapfrog_steps` steps of size `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStack {
    hamiltonians: Vec<SeparableHamiltonianModel>,
    leapfrog_steps: usize,
    dt: f64,
}

impl FlowStack {
    pub fn new(hamiltonians: Vec<SeparableHamiltonianModel>, leapfrog_steps: usize, dt: f64) -> Result<Self> {
        let first = hamiltonians.first().ok_or_else(|| Error::invalid("flow stack needs a Hamiltonian"))?;
        for h in &hamiltonians {
            check_dim(first.kinetic().input_dim(), h.kinetic().input_dim())?;
        }
        if leapfrog_steps == 0 {
            return Err(Error::invalid("leapfrog_steps must be positive"));
        }
        // dt is learned through ln dt, so it must stay positive
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("flow dt must be positive and finite"));
        }
        Ok(Self {
            hamiltonians,
            leapfrog_steps,
            dt,
        })
    }

    pub fn random(dim: usize, n_hamiltonians: usize, leapfrog_steps: usize, dt: f64, hidden: &[usize], rng: &mut RngStream) -> Result<Self> {
        let hs = (0..n_hamiltonians)
            .map(|i| SeparableHamiltonianModel::new(dim, hidden, &mut rng.fork(i as u64)))
            .collect();
        Self::new(hs, leapfrog_steps, dt)
    }

    /// All networks zero: the flow is the identity.
    pub fn identity(dim: usize, n_hamiltonians: usize, leapfrog_steps: usize, dt: f64, hidden: &[usize]) -> Result<Self> {
        let hs = (0..n_hamiltonians).map(|_| SeparableHamiltonianModel::zeros(dim, hidden)).collect();
        Self::new(hs, leapfrog_steps, dt)
    }

    pub fn dim(&self) -> usize {
        self.hamiltonians[0].kinetic().input_dim()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn leapfrog_steps(&self) -> usize {
        self.leapfrog_steps
    }

    pub fn hamiltonians(&self) -> &[SeparableHamiltonianModel] {
        &self.hamiltonians
    }

    /// Network parameters followed by `ln dt`.
    pub fn num_params(&self) -> usize {
        self.hamiltonians.iter().map(|h| h.num_params()).sum::<usize>() + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for h in &self.hamiltonians {
            h.write_params(&mut out);
        }
        out.push(self.dt.ln());
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_dim(self.num_params(), flat.len())?;
        let mut rest = flat;
        for h in &mut self.hamiltonians {
            rest = h.read_params(rest)?;
        }
        let dt = rest[0].exp();
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::NonFinite("flow dt left the positive range".into()));
        }
        self.dt = dt;
        Ok(())
    }

    fn run(&self, s: &PhaseState, order: impl Iterator<Item = usize>, dt: f64) -> Result<PhaseState> {
        check_dim(self.dim(), s.dim())?;
        let mut cur = s.clone();
        for i in order {
            let spec = IntegratorSpec::new(IntegratorKind::Leapfrog, dt, self.leapfrog_steps);
            cur = rollout(&self.hamiltonians[i], &cur, &spec)?.into_states().pop().expect("rollout keeps its states");
        }
        Ok(cur)
    }

    pub fn forward(&self, s0: &PhaseState) -> Result<PhaseState> {
        self.run(s0, 0..self.hamiltonians.len(), self.dt)
    }

    /// Exact inverse: Hamiltonians in reverse order, each integrated with
    /// `−dt`.
    pub fn inverse(&self, s_t: &PhaseState) -> Result<PhaseState> {
        self.run(s_t, (0..self.hamiltonians.len()).rev(), -self.dt)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundStack {
        BoundStack {
            hamiltonians: self.hamiltonians.iter().map(|h| h.bind(tape)).collect(),
            log_dt: tape.input(&[self.dt.ln()]),
            leapfrog_steps: self.leapfrog_steps,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut networks = Vec::new();
        for h in &self.hamiltonians {
            networks.push(h.kinetic().clone());
            networks.push(h.potential().clone());
        }
        Checkpoint {
            kind: "flow_stack".into(),
            scalars: vec![self.leapfrog_steps as f64, self.dt],
            networks,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("flow_stack")?;
        if ck.scalars.len() != 2 || ck.networks.is_empty() || !ck.networks.len().is_multiple_of(2) {
            return Err(Error::Format("malformed flow_stack checkpoint".into()));
        }
        let hs = ck
            .networks
            .chunks(2)
            .map(|pair| SeparableHamiltonianModel::from_networks(pair[0].clone(), pair[1].clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(hs, ck.scalars[0] as usize, ck.scalars[1])
    }
}

/// A [`FlowStack`] on a tape, with `ln dt` as a leaf.
#[derive(Clone, Debug)]
pub struct BoundStack {
    hamiltonians: Vec<BoundHamiltonian>,
    log_dt: Var,
    leapfrog_steps: usize,
}

impl BoundStack {
    fn run(&self, tape: &mut Tape, q: Var, p: Var, reverse: bool) -> (Var, Var) {
        let dt = tape.exp(self.log_dt);
        let dt = if reverse { tape.neg(dt) } else { dt };
        let (mut q, mut p) = (q, p);
        let order: Vec<&BoundHamiltonian> = if reverse {
            self.hamiltonians.iter().rev().collect()
        } else {
            self.hamiltonians.iter().collect()
        };
        for h in order {
            let mut force = None;
            for _ in 0..self.leapfrog_steps {
                let (q1, p1, f1) = h.leapfrog(tape, q, p, force, dt);
                q = q1;
                p = p1;
                force = Some(f1);
            }
        }
        (q, p)
    }

    pub fn forward(&self, tape: &mut Tape, q: Var, p: Var) -> (Var, Var) {
        self.run(tape, q, p, false)
    }

    pub fn inverse(&self, tape: &mut Tape, q: Var, p: Var) -> (Var, Var) {
        self.run(tape, q, p, true)
    }

    /// Leaves in [`FlowStack::params`] order.
    pub fn param_vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.hamiltonians.iter().flat_map(|h| h.param_vars()).collect();
        v.push(self.log_dt);
        v
    }
}

pub fn flow_forward(stack: &FlowStack, s0: &PhaseState) -> Result<PhaseState> {
    stack.forward(s0)
}

pub fn flow_inverse(stack: &FlowStack, s_t: &PhaseState) -> Result<PhaseState> {
    stack.inverse(s_t)
}

/// `ln p(s_T) = ln π(inverse(s_T))`; the flow preserves volume, so there is
/// no Jacobian term.
pub fn log_density(stack: &FlowStack, prior: &PriorSpec, s_t: &PhaseState) -> Result<f64> {
    let s0 = stack.inverse(s_t)?;
    Ok(prior.logpdf(&s0.concat()))
}

/// One leapfrog step of the first Hamiltonian at each grid point of a
/// one-dimensional model's phase plane: returns the displacement `(Δq, Δp)`.
pub fn leapfrog_displacements(stack: &FlowStack, points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    check_dim(1, stack.dim())?;
    let h = &stack.hamiltonians[0];
    points
        .iter()
        .map(|&[q, p]| {
            let s = PhaseState::new(vec![q], vec![p])?;
            let next = crate::integrators::leapfrog_step(h, &s, stack.dt)?;
            Ok([next.q()[0] - q, next.p()[0] - p])
        })
        .collect()
}
