use crate::diffgraph::{Tape, Var};
use crate::energy::EnergyFunction;
use crate::error::{check_dim, Result};
use crate::models::mlp::{Activation, BoundMlp, MlpParameters};
use crate::phase::PhaseState;
use crate::rng::RngStream;

/// A learned separable Hamiltonian `H(q, p) = K(p) + V(q)` with scalar-output
/// networks `K` and `V`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableHamiltonianModel {
    kinetic: MlpParameters,
    potential: MlpParameters,
}

impl SeparableHamiltonianModel {
    /// Softplus networks `[d, hidden..., 1]` for both terms.
    pub fn new(dim: usize, hidden: &[usize], rng: &mut RngStream) -> Self {
        let sizes = Self::sizes(dim, hidden);
        let kinetic = MlpParameters::new(&sizes, Activation::Softplus, rng);
        let potential = MlpParameters::new(&sizes, Activation::Softplus, rng);
        Self { kinetic, potential }
    }

    /// Both networks identically zero, so `H ≡ 0`.
    pub fn zeros(dim: usize, hidden: &[usize]) -> Self {
        let sizes = Self::sizes(dim, hidden);
        Self {
            kinetic: MlpParameters::zeros(&sizes, Activation::Softplus),
            potential: MlpParameters::zeros(&sizes, Activation::Softplus),
        }
    }

    fn sizes(dim: usize, hidden: &[usize]) -> Vec<usize> {
        let mut sizes = vec![dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        sizes
    }

    pub fn from_networks(kinetic: MlpParameters, potential: MlpParameters) -> Result<Self> {
        check_dim(kinetic.input_dim(), potential.input_dim())?;
        check_dim(1, kinetic.output_dim())?;
        check_dim(1, potential.output_dim())?;
        Ok(Self { kinetic, potential })
    }

    pub fn kinetic(&self) -> &MlpParameters {
        &self.kinetic
    }

    pub fn potential(&self) -> &MlpParameters {
        &self.potential
    }

    pub fn kinetic_mut(&mut self) -> &mut MlpParameters {
        &mut self.kinetic
    }

    pub fn potential_mut(&mut self) -> &mut MlpParameters {
        &mut self.potential
    }

    pub fn num_params(&self) -> usize {
        self.kinetic.num_params() + self.potential.num_params()
    }

    /// `K` parameters, then `V`.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        self.kinetic.write_params(out);
        self.potential.write_params(out);
    }

    pub fn read_params<'a>(&mut self, src: &'a [f64]) -> Result<&'a [f64]> {
        let rest = self.kinetic.read_params(src)?;
        self.potential.read_params(rest)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.write_params(&mut v);
        v
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        let rest = self.read_params(flat)?;
        check_dim(0, rest.len())
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundHamiltonian {
        BoundHamiltonian {
            kinetic: self.kinetic.bind(tape),
            potential: self.potential.bind(tape),
        }
    }
}

/// A [`SeparableHamiltonianModel`] bound to a tape. All methods append nodes.
#[derive(Clone, Debug)]
pub struct BoundHamiltonian {
    kinetic: BoundMlp,
    potential: BoundMlp,
}

impl BoundHamiltonian {
    pub fn dim(&self) -> usize {
        self.kinetic.input_dim()
    }

    pub fn kinetic(&self, tape: &mut Tape, p: Var) -> Var {
        self.kinetic.forward(tape, p)
    }

    pub fn potential(&self, tape: &mut Tape, q: Var) -> Var {
        self.potential.forward(tape, q)
    }

    pub fn energy(&self, tape: &mut Tape, q: Var, p: Var) -> Var {
        let k = self.kinetic(tape, p);
        let v = self.potential(tape, q);
        tape.add(k, v)
    }

    /// `∂V/∂q` as graph nodes (differentiable again).
    pub fn grad_q(&self, tape: &mut Tape, q: Var) -> Var {
        let v = self.potential(tape, q);
        tape.grad_as_graph(v, &[q]).expect("scalar potential")[0]
    }

    /// `∂K/∂p` as graph nodes (differentiable again).
    pub fn grad_p(&self, tape: &mut Tape, p: Var) -> Var {
        let k = self.kinetic(tape, p);
        tape.grad_as_graph(k, &[p]).expect("scalar kinetic energy")[0]
    }

    /// Parameter leaves in [`SeparableHamiltonianModel::params`] order.
    pub fn param_vars(&self) -> Vec<Var> {
        let mut v = self.kinetic.param_vars().to_vec();
        v.extend_from_slice(self.potential.param_vars());
        v
    }

    /// One kick-drift-kick leapfrog step on the tape. `force` is `∂V/∂q` at
    /// `q` if already known; the returned triple is `(q', p', ∂V/∂q(q'))`.
    pub fn leapfrog(&self, tape: &mut Tape, q: Var, p: Var, force: Option<Var>, dt: Var) -> (Var, Var, Var) {
        let half = tape.scale_by(dt, 0.5);
        let f0 = match force {
            Some(f) => f,
            None => self.grad_q(tape, q),
        };
        let kick = tape.scale(f0, half);
        let p_half = tape.sub(p, kick);
        let v = self.grad_p(tape, p_half);
        let drift = tape.scale(v, dt);
        let q1 = tape.add(q, drift);
        let f1 = self.grad_q(tape, q1);
        let kick = tape.scale(f1, half);
        let p1 = tape.sub(p_half, kick);
        (q1, p1, f1)
    }
}

/// `H(s) = K(p) + V(q)` on the tape.
pub fn model_energy(m: &SeparableHamiltonianModel, s: &PhaseState, tape: &mut Tape) -> Result<(Var, BoundHamiltonian, Var, Var)> {
    check_dim(m.kinetic.input_dim(), s.dim())?;
    let bound = m.bind(tape);
    let q = tape.input(s.q());
    let p = tape.input(s.p());
    let h = bound.energy(tape, q, p);
    Ok((h, bound, q, p))
}

impl EnergyFunction for SeparableHamiltonianModel {
    fn dim(&self) -> usize {
        self.kinetic.input_dim()
    }

    fn energy(&self, s: &PhaseState) -> Result<f64> {
        check_dim(self.dim(), s.dim())?;
        Ok(self.kinetic.eval(s.p())?[0] + self.potential.eval(s.q())?[0])
    }

    fn grad_q(&self, s: &PhaseState) -> Result<Vec<f64>> {
        check_dim(self.dim(), s.dim())?;
        self.potential.input_gradient(s.q())
    }

    fn grad_p(&self, s: &PhaseState) -> Result<Vec<f64>> {
        check_dim(self.dim(), s.dim())?;
        self.kinetic.input_gradient(s.p())
    }

    fn is_separable(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{gradient_check, random_state};
    use crate::systems::{MassSpring, MassSpringParams};

    #[test]
    fn zero_model_has_zero_energy() {
        let m = SeparableHamiltonianModel::zeros(2, &[8, 8]);
        let s = PhaseState::new(vec![0.3, -1.0], vec![2.0, 0.1]).unwrap();
        assert_eq!(m.energy(&s).unwrap(), 0.0);
        assert_eq!(m.grad_q(&s).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngStream::new(21);
        let m = SeparableHamiltonianModel::new(2, &[16, 16], &mut rng);
        for _ in 0..20 {
            let s = random_state(&mut rng, 2, 2.0);
            let err = gradient_check(&m, &s, 1e-5).unwrap();
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn tape_energy_matches_plain_evaluation() {
        let mut rng = RngStream::new(4);
        let m = SeparableHamiltonianModel::new(1, &[8], &mut rng);
        let s = PhaseState::new(vec![0.4], vec![-0.9]).unwrap();
        let mut tape = Tape::new();
        let (h, _, q, p) = model_energy(&m, &s, &mut tape).unwrap();
        assert!((tape.scalar_value(h) - m.energy(&s).unwrap()).abs() < 1e-14);
        let g = tape.backward(h).unwrap();
        assert!((g.get(q)[0] - m.grad_q(&s).unwrap()[0]).abs() < 1e-14);
        assert!((g.get(p)[0] - m.grad_p(&s).unwrap()[0]).abs() < 1e-14);
        assert!(model_energy(&m, &PhaseState::zeros(2), &mut tape).is_err());
    }

    #[test]
    fn constructed_model_reproduces_mass_spring() {
        let m = crate::models::exact_mass_spring_model(MassSpringParams { k: 2.0, m: 0.5 });
        let truth = MassSpring::new(MassSpringParams { k: 2.0, m: 0.5 }).unwrap();
        let mut rng = RngStream::new(1);
        for _ in 0..50 {
            let s = random_state(&mut rng, 1, 2.0);
            assert!((m.energy(&s).unwrap() - truth.energy(&s).unwrap()).abs() < 1e-10);
            assert!((m.grad_q(&s).unwrap()[0] - truth.grad_q(&s).unwrap()[0]).abs() < 1e-10);
            assert!((m.grad_p(&s).unwrap()[0] - truth.grad_p(&s).unwrap()[0]).abs() < 1e-10);
        }
    }
}
