//! Ground-truth trajectory datasets: initial conditions, reference
//! integration, observation noise, rendering and the on-disk format.

mod render;
mod store;

pub use render::{body_positions, render_frame, write_ppm, Frame, RenderSpec};
pub use store::{load_dataset, write_dataset, Dataset, Manifest, Split, FORMAT_VERSION};

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::{reference_rollout, DEFAULT_DT};
use crate::phase::{PhaseState, Trajectory};
use crate::rng::RngStream;
use crate::systems::{System, SystemParams, DATASET_SOFTENING};

/// RK4 substeps per output step for ground-truth trajectories.
pub const REFERENCE_SUBSTEPS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub system: System,
    /// Physical parameters; defaults for `system` when absent.
    pub params: Option<SystemParams>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_steps: usize,
    pub dt: f64,
    /// Defaults for `system` when absent.
    pub radius_range: Option<(f64, f64)>,
    pub noise_std: Option<f64>,
    pub image_size: usize,
    pub channels: usize,
    /// Write per-step PPM frames of the noisy states.
    pub render: bool,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            system: System::MassSpring,
            params: None,
            n_train: 1000,
            n_test: 200,
            n_steps: 30,
            dt: DEFAULT_DT,
            radius_range: None,
            noise_std: None,
            image_size: 64,
            channels: 3,
            render: true,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn for_system(system: System) -> Self {
        Self {
            system,
            ..Self::default()
        }
    }

    pub fn resolved_params(&self) -> SystemParams {
        self.params.clone().unwrap_or_else(|| SystemParams::defaults(self.system, DATASET_SOFTENING))
    }

    pub fn resolved_radius_range(&self) -> (f64, f64) {
        self.radius_range.unwrap_or_else(|| self.system.default_radius_range())
    }

    pub fn resolved_noise_std(&self) -> f64 {
        self.noise_std.unwrap_or_else(|| self.system.default_noise_std())
    }

    /// Fills in every defaulted field.
    pub fn resolved(&self) -> Self {
        Self {
            params: Some(self.resolved_params()),
            radius_range: Some(self.resolved_radius_range()),
            noise_std: Some(self.resolved_noise_std()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.resolved_radius_range();
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return Err(Error::invalid("radius_range must satisfy 0 <= lo <= hi"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be at least 1"));
        }
        if !(self.dt != 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be nonzero and finite"));
        }
        let noise = self.resolved_noise_std();
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::invalid("noise_std must be non-negative"));
        }
        if self.image_size == 0 || self.channels != 3 {
            return Err(Error::invalid("frames are RGB with a positive image size"));
        }
        let params = self.resolved_params();
        let expected = match (&params, self.system) {
            (SystemParams::MassSpring(_), System::MassSpring) | (SystemParams::Pendulum(_), System::Pendulum) => true,
            (SystemParams::NBody(p), System::TwoBody) => p.n_bodies() == 2,
            (SystemParams::NBody(p), System::ThreeBody) => p.n_bodies() == 3,
            _ => false,
        };
        if !expected {
            return Err(Error::invalid(format!("parameters do not describe a {} system", self.system)));
        }
        params.hamiltonian()?;
        Ok(())
    }
}

/// Draws `r ~ U(lo, hi)` and a point on the radius-`r` sphere of the
/// system's sampling space. One-dimensional systems sample `(q, p)` on a
/// circle. n-body systems draw a Gaussian direction, move to the
/// centre-of-mass frame with zero total momentum, then scale the whole
/// `(q, p)` vector to norm `r`.
pub fn sample_initial_state(params: &SystemParams, radius_range: (f64, f64), rng: &mut RngStream) -> Result<PhaseState> {
    let (lo, hi) = radius_range;
    if !(lo <= hi && lo >= 0.0) {
        return Err(Error::invalid("radius_range must satisfy 0 <= lo <= hi"));
    }
    let r = if lo == hi { lo } else { rng.uniform_range(lo, hi) };
    match params {
        SystemParams::MassSpring(_) | SystemParams::Pendulum(_) => {
            let a = rng.uniform_range(0.0, TAU);
            PhaseState::new(vec![r * a.cos()], vec![r * a.sin()])
        }
        SystemParams::NBody(p) => {
            let n = p.n_bodies();
            let mut q: Vec<f64> = (0..2 * n).map(|_| rng.standard_normal()).collect();
            let mut mom: Vec<f64> = (0..2 * n).map(|_| rng.standard_normal()).collect();
            let total_mass: f64 = p.masses.iter().sum();
            for axis in 0..2 {
                let com = (0..n).map(|i| p.masses[i] * q[2 * i + axis]).sum::<f64>() / total_mass;
                let total_p = (0..n).map(|i| mom[2 * i + axis]).sum::<f64>();
                for i in 0..n {
                    q[2 * i + axis] -= com;
                    mom[2 * i + axis] -= p.masses[i] * total_p / total_mass;
                }
            }
            let norm = q.iter().chain(&mom).map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Singularity("degenerate n-body direction".into()));
            }
            let s = r / norm;
            PhaseState::new(q.iter().map(|x| x * s).collect(), mom.iter().map(|x| x * s).collect())
        }
    }
}

/// Reference trajectory of `n_steps + 1` states sampled every `dt`, from RK4
/// with [`REFERENCE_SUBSTEPS`] substeps per `dt`.
pub fn generate_trajectory(params: &SystemParams, s0: &PhaseState, n_steps: usize, dt: f64) -> Result<Trajectory> {
    let h = params.hamiltonian()?;
    let t = reference_rollout(&h, s0, dt, n_steps, REFERENCE_SUBSTEPS)?;
    if t.states().iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("reference trajectory".into()));
    }
    Ok(t)
}

/// Adds i.i.d. `N(0, noise_std²)` to every coordinate of every state.
pub fn add_observation_noise(traj: &Trajectory, noise_std: f64, rng: &mut RngStream) -> Result<Trajectory> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid("noise_std must be non-negative"));
    }
    if noise_std == 0.0 {
        return Ok(traj.clone());
    }
    let states = traj
        .states()
        .iter()
        .map(|s| {
            let q = s.q().iter().map(|x| x + noise_std * rng.standard_normal()).collect();
            let p = s.p().iter().map(|x| x + noise_std * rng.standard_normal()).collect();
            PhaseState::new(q, p)
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(states, traj.dt(), traj.integrator())
}

/// A clean trajectory and its noisy observation.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedTrajectory {
    pub clean: Trajectory,
    pub noisy: Trajectory,
    /// Initial conditions rejected before this one (integration failures).
    pub resamples: usize,
}

const MAX_RESAMPLES: usize = 100;

/// Generates trajectory `index` of a split from its own forked stream, so the
/// result does not depend on generation order. Initial states whose
/// integration fails are redrawn from the next sub-stream.
pub fn generate_one(spec: &DatasetSpec, split_stream: &RngStream, index: usize) -> Result<GeneratedTrajectory> {
    let params = spec.resolved_params();
    let stream = split_stream.fork(index as u64);
    let mut last_err = None;
    for attempt in 0..MAX_RESAMPLES {
        let mut init_rng = stream.fork(2 * attempt as u64);
        let s0 = sample_initial_state(&params, spec.resolved_radius_range(), &mut init_rng)?;
        match generate_trajectory(&params, &s0, spec.n_steps, spec.dt) {
            Ok(clean) => {
                let mut noise_rng = stream.fork(2 * attempt as u64 + 1);
                let noisy = add_observation_noise(&clean, spec.resolved_noise_std(), &mut noise_rng)?;
                return Ok(GeneratedTrajectory {
                    clean,
                    noisy,
                    resamples: attempt,
                });
            }
            Err(e) if e.is_numerical() => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::invalid("no trajectory generated")))
}
