//! Closed-form Hamiltonians of the four benchmark systems.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::energy::EnergyFunction;
use crate::error::{check_dim, Error, Result};
use crate::phase::PhaseState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassSpringParams {
    pub k: f64,
    pub m: f64,
}

impl Default for MassSpringParams {
    fn default() -> Self {
        Self { k: 2.0, m: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub m: f64,
    pub g: f64,
    pub l: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { m: 0.5, g: 3.0, l: 1.0 }
    }
}

/// Planar gravitating bodies. Positions are packed body-major:
/// `q = [x₁, y₁, x₂, y₂, ...]`, and likewise for momenta.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NBodyParams {
    pub masses: Vec<f64>,
    pub g: f64,
    /// ε in `sqrt(|q_j − q_i|² + ε²)`.
    pub softening: f64,
}

impl NBodyParams {
    pub fn uniform(n_bodies: usize, mass: f64, g: f64, softening: f64) -> Self {
        Self {
            masses: vec![mass; n_bodies],
            g,
            softening,
        }
    }

    pub fn n_bodies(&self) -> usize {
        self.masses.len()
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

/// `H = ½kq² + p²/2m`
#[derive(Clone, Debug)]
pub struct MassSpring {
    params: MassSpringParams,
}

impl MassSpring {
    pub fn new(params: MassSpringParams) -> Result<Self> {
        positive("k", params.k)?;
        positive("m", params.m)?;
        Ok(Self { params })
    }

    pub fn params(&self) -> MassSpringParams {
        self.params
    }
}

pub fn mass_spring_hamiltonian(params: MassSpringParams) -> Result<MassSpring> {
    MassSpring::new(params)
}

impl EnergyFunction for MassSpring {
    fn dim(&self) -> usize {
        1
    }

    fn energy(&self, s: &PhaseState) -> Result<f64> {
        check_dim(1, s.dim())?;
        let (q, p) = (s.q()[0], s.p()[0]);
        Ok(0.5 * self.params.k * q * q + p * p / (2.0 * self.params.m))
    }

    fn grad_q(&self, s: &PhaseState) -> Result<Vec<f64>> {
        check_dim(1, s.dim())?;
        Ok(vec![self.params.k * s.q()[0]])
    }

    fn grad_p(&self, s: &PhaseState) -> Result<Vec<f64>> {
        check_dim(1, s.dim())?;
        Ok(vec![s.p()[0] / self.params.m])
    }

    fn is_separable(&self) -> bool {
        true
    }
}

/// `H = 2mgl(1 − cos q) + p²/(2ml²)`. The potential carries a factor of 2
/// relative to the textbook pendulum.
#[derive(Clone, Debug)]
pub struct Pendulum {
    params: PendulumParams,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Result<Self> {
        positive("m", params.m)?;
        positive("g", params.g)?;
        positive("l", params.l)?;
        Ok(Self { params })
    }

    pub fn params(&self) -> PendulumParams {
        self.params
    }
}

pub fn pendulum_hamiltonian(params: PendulumParams) -> Result<Pendulum> {
    Pendulum::new(params)
}

impl EnergyFunction for Pendulum {
    fn dim(&self) -> usize {
        1
    }

    fn energy(&self, s: &PhaseState) -> Result<f64> {
        check_dim(1, s.dim())?;
        let PendulumParams { m, g, l } = self.params;
        let (q, p) = (s.q()[0], s.p()[0]);
        Ok(2.0 * m * g * l * (1.0 - q.cos()) + p * p / (2.0 * m * l * l))
    }

    fn grad_q(&self, s: &PhaseState) -> Result<Vec<f64>> {
        check_dim(1, s.dim())?;
        let PendulumParams { m, g, l } = self.params;
        Ok(vec![2.0 * m * g * l * s.q()[0].sin()])
    }

    fn grad_p(&self, s: &PhaseState) -> Result<Vec<f64>> {
        check_dim(1, s.dim())?;
        let PendulumParams { m, l, .. } = self.params;
        Ok(vec![s.p()[0] / (m * l * l)])
    }

    fn is_separable(&self) -> bool {
        true
    }
}

/// `H = Σ |p_i|²/2m_i − Σ_{i<j} g m_i m_j / sqrt(|q_j − q_i|² + ε²)` for planar bodies.
#[derive(Clone, Debug)]
pub struct NBody {
    params: NBodyParams,
}

impl NBody {
    pub fn new(params: NBodyParams) -> Result<Self> {
        if params.n_bodies() < 2 {
            return Err(Error::invalid("n-body system needs at least two bodies"));
        }
        for &m in &params.masses {
            positive("body mass", m)?;
        }
        positive("g", params.g)?;
        if !(params.softening >= 0.0) {
            return Err(Error::invalid("softening must be >= 0"));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &NBodyParams {
        &self.params
    }

    fn check(&self, s: &PhaseState) -> Result<()> {
        check_dim(2 * self.params.n_bodies(), s.dim())
    }

    /// Softened distance between bodies `i` and `j` and the separation
    /// vector `q_j − q_i`.
    fn separation(&self, q: &[f64], i: usize, j: usize) -> Result<(f64, [f64; 2])> {
        let d = [q[2 * j] - q[2 * i], q[2 * j + 1] - q[2 * i + 1]];
        let eps = self.params.softening;
        let r = (d[0] * d[0] + d[1] * d[1] + eps * eps).sqrt();
        if r == 0.0 {
            return Err(Error::Singularity(format!(
                "bodies {i} and {j} coincide with zero softening"
            )));
        }
        Ok((r, d))
    }
}

pub fn nbody_hamiltonian(params: NBodyParams) -> Result<NBody> {
    NBody::new(params)
}

impl EnergyFunction for NBody {
    fn dim(&self) -> usize {
        2 * self.params.n_bodies()
    }

    fn energy(&self, s: &PhaseState) -> Result<f64> {
        self.check(s)?;
        let masses = &self.params.masses;
        let (q, p) = (s.q(), s.p());
        let mut kinetic = 0.0;
        for (i, &m) in masses.iter().enumerate() {
            kinetic += (p[2 * i] * p[2 * i] + p[2 * i + 1] * p[2 * i + 1]) / (2.0 * m);
        }
        let mut potential = 0.0;
        for i in 0..masses.len() {
            for j in i + 1..masses.len() {
                let (r, _) = self.separation(q, i, j)?;
                potential -= self.params.g * masses[i] * masses[j] / r;
            }
        }
        Ok(kinetic + potential)
    }

    fn grad_q(&self, s: &PhaseState) -> Result<Vec<f64>> {
        self.check(s)?;
        let masses = &self.params.masses;
        let q = s.q();
        let mut grad = vec![0.0; q.len()];
        for i in 0..masses.len() {
            for j in i + 1..masses.len() {
                let (r, d) = self.separation(q, i, j)?;
                let c = self.params.g * masses[i] * masses[j] / (r * r * r);
                for k in 0..2 {
                    grad[2 * i + k] -= c * d[k];
                    grad[2 * j + k] += c * d[k];
                }
            }
        }
        Ok(grad)
    }

    fn grad_p(&self, s: &PhaseState) -> Result<Vec<f64>> {
        self.check(s)?;
        Ok(s.p()
            .iter()
            .enumerate()
            .map(|(k, &pk)| pk / self.params.masses[k / 2])
            .collect())
    }

    fn is_separable(&self) -> bool {
        true
    }
}

/// The four benchmark systems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    MassSpring,
    Pendulum,
    TwoBody,
    ThreeBody,
}

impl System {
    pub const ALL: [System; 4] = [
        System::MassSpring,
        System::Pendulum,
        System::TwoBody,
        System::ThreeBody,
    ];

    pub fn name(self) -> &'static str {
        match self {
            System::MassSpring => "mass_spring",
            System::Pendulum => "pendulum",
            System::TwoBody => "two_body",
            System::ThreeBody => "three_body",
        }
    }

    /// Degrees of freedom `n`.
    pub fn dim(self) -> usize {
        match self {
            System::MassSpring | System::Pendulum => 1,
            System::TwoBody => 4,
            System::ThreeBody => 6,
        }
    }

    pub fn n_bodies(self) -> usize {
        match self {
            System::MassSpring | System::Pendulum => 1,
            System::TwoBody => 2,
            System::ThreeBody => 3,
        }
    }

    /// Range of the phase-space radius used to sample initial conditions.
    pub fn default_radius_range(self) -> (f64, f64) {
        match self {
            System::MassSpring => (0.1, 1.0),
            System::Pendulum => (1.3, 2.3),
            System::TwoBody => (0.5, 1.5),
            System::ThreeBody => (0.9, 1.2),
        }
    }

    /// Observation noise standard deviation.
    pub fn default_noise_std(self) -> f64 {
        match self {
            System::MassSpring | System::Pendulum => 0.1,
            System::TwoBody => 0.05,
            System::ThreeBody => 0.2,
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mass_spring" | "mass-spring" => Ok(System::MassSpring),
            "pendulum" => Ok(System::Pendulum),
            "two_body" | "two-body" => Ok(System::TwoBody),
            "three_body" | "three-body" => Ok(System::ThreeBody),
            other => Err(Error::invalid(format!("unknown system '{other}'"))),
        }
    }
}

/// Physical parameters for any of the four systems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum SystemParams {
    MassSpring(MassSpringParams),
    Pendulum(PendulumParams),
    NBody(NBodyParams),
}

/// Softening used when generating n-body datasets.
pub const DATASET_SOFTENING: f64 = 1e-2;

impl SystemParams {
    /// Defaults for `system`. n-body systems use unit masses, `g = 1` and the
    /// given softening.
    pub fn defaults(system: System, softening: f64) -> Self {
        match system {
            System::MassSpring => SystemParams::MassSpring(MassSpringParams::default()),
            System::Pendulum => SystemParams::Pendulum(PendulumParams::default()),
            System::TwoBody => SystemParams::NBody(NBodyParams::uniform(2, 1.0, 1.0, softening)),
            System::ThreeBody => SystemParams::NBody(NBodyParams::uniform(3, 1.0, 1.0, softening)),
        }
    }

    pub fn hamiltonian(&self) -> Result<Box<dyn EnergyFunction>> {
        Ok(match self {
            SystemParams::MassSpring(p) => Box::new(MassSpring::new(*p)?),
            SystemParams::Pendulum(p) => Box::new(Pendulum::new(*p)?),
            SystemParams::NBody(p) => Box::new(NBody::new(p.clone())?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{gradient_check, random_state};
    use crate::rng::RngStream;
    use std::f64::consts::PI;

    fn st(q: &[f64], p: &[f64]) -> PhaseState {
        PhaseState::new(q.to_vec(), p.to_vec()).unwrap()
    }

    #[test]
    fn mass_spring_examples() {
        let h = mass_spring_hamiltonian(MassSpringParams { k: 2.0, m: 0.5 }).unwrap();
        assert_eq!(h.energy(&st(&[1.0], &[0.0])).unwrap(), 1.0);
        assert_eq!(h.energy(&st(&[0.0], &[0.0])).unwrap(), 0.0);
        assert_eq!(h.grad_q(&st(&[1.0], &[0.0])).unwrap(), vec![2.0]);
        assert_eq!(h.grad_p(&st(&[1.0], &[0.0])).unwrap(), vec![0.0]);
        assert!(h.energy(&PhaseState::zeros(2)).is_err());
    }

    #[test]
    fn pendulum_examples() {
        let h = pendulum_hamiltonian(PendulumParams::default()).unwrap();
        assert_eq!(h.energy(&st(&[0.0], &[0.0])).unwrap(), 0.0);
        assert!((h.energy(&st(&[PI], &[0.0])).unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(h.energy(&st(&[0.0], &[1.0])).unwrap(), 1.0);
        assert!(h.grad_q(&PhaseState::zeros(3)).is_err());
    }

    #[test]
    fn nbody_examples() {
        let two = nbody_hamiltonian(NBodyParams::uniform(2, 1.0, 1.0, 0.0)).unwrap();
        let s = st(&[0.0, 0.0, 1.0, 0.0], &[0.0; 4]);
        assert_eq!(two.energy(&s).unwrap(), -1.0);
        let s = st(&[0.0, 0.0, 2.0, 0.0], &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(two.energy(&s).unwrap(), 0.0);

        let three = nbody_hamiltonian(NBodyParams::uniform(3, 1.0, 1.0, 0.0)).unwrap();
        let h3 = 3f64.sqrt() / 2.0;
        let s = st(&[0.0, 0.0, 1.0, 0.0, 0.5, h3], &[0.0; 6]);
        assert!((three.energy(&s).unwrap() + 3.0).abs() < 1e-12);
    }

    #[test]
    fn coincident_bodies_are_singular() {
        let two = nbody_hamiltonian(NBodyParams::uniform(2, 1.0, 1.0, 0.0)).unwrap();
        let s = st(&[1.0, 1.0, 1.0, 1.0], &[0.0; 4]);
        assert!(matches!(two.energy(&s), Err(Error::Singularity(_))));
        assert!(matches!(two.grad_q(&s), Err(Error::Singularity(_))));
        let soft = nbody_hamiltonian(NBodyParams::uniform(2, 1.0, 1.0, 1e-2)).unwrap();
        assert!((soft.energy(&s).unwrap() + 100.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(MassSpring::new(MassSpringParams { k: 0.0, m: 1.0 }).is_err());
        assert!(Pendulum::new(PendulumParams { m: 1.0, g: -1.0, l: 1.0 }).is_err());
        assert!(NBody::new(NBodyParams::uniform(1, 1.0, 1.0, 0.0)).is_err());
        assert!(NBody::new(NBodyParams::uniform(2, 1.0, 1.0, -1.0)).is_err());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = RngStream::new(11);
        for system in System::ALL {
            let h = SystemParams::defaults(system, 0.0).hamiltonian().unwrap();
            let mut checked = 0;
            while checked < 100 {
                let s = random_state(&mut rng, system.dim(), 2.0);
                if system.n_bodies() > 1 && min_separation(s.q()) < 0.3 {
                    continue;
                }
                let err = gradient_check(&h, &s, 1e-5).unwrap();
                assert!(err < 1e-5, "{system}: rel err {err}");
                checked += 1;
            }
        }
    }

    fn min_separation(q: &[f64]) -> f64 {
        let n = q.len() / 2;
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let dx = q[2 * j] - q[2 * i];
                let dy = q[2 * j + 1] - q[2 * i + 1];
                best = best.min((dx * dx + dy * dy).sqrt());
            }
        }
        best
    }

    #[test]
    fn nbody_translation_invariant() {
        let h = nbody_hamiltonian(NBodyParams::uniform(3, 1.0, 1.0, 0.0)).unwrap();
        let s = st(&[0.3, -0.2, 1.1, 0.4, -0.7, 0.9], &[0.1, 0.2, -0.3, 0.0, 0.5, -0.4]);
        let shifted: Vec<f64> = s
            .q()
            .iter()
            .enumerate()
            .map(|(k, v)| v + if k % 2 == 0 { 0.37 } else { -1.25 })
            .collect();
        let s2 = PhaseState::new(shifted, s.p().to_vec()).unwrap();
        assert!((h.energy(&s).unwrap() - h.energy(&s2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn system_names_round_trip() {
        for s in System::ALL {
            assert_eq!(s.name().parse::<System>().unwrap(), s);
        }
        assert!("double_pendulum".parse::<System>().is_err());
    }
}
