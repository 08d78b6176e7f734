//! Phase-space points and trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A point `(q, p)` in phase space. Both halves have the same length `n` and
/// every entry is finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    q: Vec<f64>,
    p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        check_dim(q.len(), p.len())?;
        if q.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("phase state entry".into()));
        }
        Ok(Self { q, p })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: vec![0.0; n],
            p: vec![0.0; n],
        }
    }

    /// Builds a state without the finiteness check. Integrators use this for
    /// intermediate values and check the result themselves.
    pub(crate) fn from_parts_unchecked(q: Vec<f64>, p: Vec<f64>) -> Self {
        debug_assert_eq!(q.len(), p.len());
        Self { q, p }
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// Degrees of freedom `n` (half the phase-space dimension).
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.q, self.p)
    }

    /// Largest absolute coordinate difference to `other`.
    pub fn max_abs_diff(&self, other: &PhaseState) -> f64 {
        self.concat()
            .iter()
            .zip(other.concat().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `[q || p]`, length `2n`.
    pub fn concat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.q.len());
        out.extend_from_slice(&self.q);
        out.extend_from_slice(&self.p);
        out
    }

    /// Inverse of [`PhaseState::concat`].
    pub fn split(v: &[f64]) -> Result<Self> {
        if !v.len().is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "cannot split odd-length vector ({}) into (q, p)",
                v.len()
            )));
        }
        let n = v.len() / 2;
        Self::new(v[..n].to_vec(), v[n..].to_vec())
    }
}

/// `[q || p]` for `s`.
pub fn state_concat(s: &PhaseState) -> Vec<f64> {
    s.concat()
}

pub fn state_split(v: &[f64]) -> Result<PhaseState> {
    PhaseState::split(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorId {
    Euler,
    Rk4,
    Leapfrog,
    /// Fine-step RK4 used as ground truth.
    Reference,
}

impl IntegratorId {
    pub fn name(self) -> &'static str {
        match self {
            IntegratorId::Euler => "euler",
            IntegratorId::Rk4 => "rk4",
            IntegratorId::Leapfrog => "leapfrog",
            IntegratorId::Reference => "reference",
        }
    }
}

/// Time-ordered states sampled every `dt`. A negative `dt` runs time backward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    states: Vec<PhaseState>,
    dt: f64,
    integrator: IntegratorId,
}

impl Trajectory {
    pub fn new(states: Vec<PhaseState>, dt: f64, integrator: IntegratorId) -> Result<Self> {
        if dt == 0.0 || !dt.is_finite() {
            return Err(Error::invalid("trajectory dt must be finite and nonzero"));
        }
        if let Some(first) = states.first() {
            let n = first.dim();
            for s in &states {
                check_dim(n, s.dim())?;
            }
        }
        Ok(Self {
            states,
            dt,
            integrator,
        })
    }

    pub fn states(&self) -> &[PhaseState] {
        &self.states
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn integrator(&self) -> IntegratorId {
        self.integrator
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Degrees of freedom of the states, 0 for an empty trajectory.
    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, PhaseState::dim)
    }

    pub fn first(&self) -> Option<&PhaseState> {
        self.states.first()
    }

    pub fn last(&self) -> Option<&PhaseState> {
        self.states.last()
    }

    pub fn into_states(self) -> Vec<PhaseState> {
        self.states
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn concat_examples() {
        let s = PhaseState::new(vec![1.0], vec![2.0]).unwrap();
        assert_eq!(state_concat(&s), vec![1.0, 2.0]);
        assert_eq!(state_concat(&PhaseState::zeros(2)), vec![0.0; 4]);
    }

    #[test]
    fn rejects_bad_states() {
        assert!(matches!(
            PhaseState::new(vec![1.0, 2.0], vec![0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(PhaseState::new(vec![f64::NAN], vec![0.0]).is_err());
        assert!(state_split(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn trajectory_rejects_zero_dt_and_mixed_dims() {
        let a = PhaseState::zeros(1);
        let b = PhaseState::zeros(2);
        assert!(Trajectory::new(vec![a.clone()], 0.0, IntegratorId::Euler).is_err());
        assert!(Trajectory::new(vec![a.clone(), b], 0.1, IntegratorId::Euler).is_err());
        assert!(Trajectory::new(vec![a], -0.1, IntegratorId::Euler).is_ok());
    }

    proptest! {
        #[test]
        fn split_inverts_concat(q in prop::collection::vec(-1e6f64..1e6, 0..6), seed in any::<u64>()) {
            let p: Vec<f64> = q.iter().enumerate().map(|(i, v)| v * 0.5 + (seed % 97) as f64 + i as f64).collect();
            let s = PhaseState::new(q, p).unwrap();
            prop_assert_eq!(state_split(&state_concat(&s)).unwrap(), s);
        }
    }
}
