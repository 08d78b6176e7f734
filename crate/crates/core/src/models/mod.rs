//! Parameterized networks and the optimizer.

pub mod adam;
pub mod checkpoint;
pub mod encoder;
pub mod mlp;
pub mod rnvp;
pub mod separable;

pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use encoder::{BoundEncoder, GaussianEncoder};
pub use mlp::{accumulate_grads, mlp_forward, Activation, BoundMlp, Layer, MlpParameters};
pub use rnvp::{rnvp_forward, rnvp_inverse, BoundRnvp, Coupling, RnvpFlow};
pub use separable::{model_energy, BoundHamiltonian, SeparableHamiltonianModel};

use crate::error::{Error, Result};
use crate::systems::MassSpringParams;

/// Network computing `c·Σᵢ xᵢ²` exactly: identity weights into a squaring
/// layer, then a constant readout.
pub fn quadratic_network(dim: usize, c: f64) -> MlpParameters {
    let mut net = MlpParameters::zeros(&[dim, dim, 1], Activation::Square);
    let layers = net.layers_mut();
    for i in 0..dim {
        layers[0].weight[i * dim + i] = 1.0;
    }
    layers[1].weight.fill(c);
    net
}

/// `H = a·|p|² + b·|q|²` as a [`SeparableHamiltonianModel`].
pub fn quadratic_model(dim: usize, kinetic_coeff: f64, potential_coeff: f64) -> SeparableHamiltonianModel {
    SeparableHamiltonianModel::from_networks(
        quadratic_network(dim, kinetic_coeff),
        quadratic_network(dim, potential_coeff),
    )
    .expect("matching quadratic networks")
}

/// The mass-spring Hamiltonian `½kq² + p²/2m` written as network weights.
pub fn exact_mass_spring_model(params: MassSpringParams) -> SeparableHamiltonianModel {
    quadratic_model(1, 0.5 / params.m, 0.5 * params.k)
}

const SEPARABLE_KIND: &str = "separable_hamiltonian";

impl SeparableHamiltonianModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: SEPARABLE_KIND.into(),
            scalars: vec![],
            networks: vec![self.kinetic().clone(), self.potential().clone()],
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(SEPARABLE_KIND)?;
        if ck.networks.len() != 2 {
            return Err(crate::error::Error::Format(format!(
                "separable model needs 2 networks, found {}",
                ck.networks.len()
            )));
        }
        Self::from_networks(ck.networks[0].clone(), ck.networks[1].clone())
    }
}

impl GaussianEncoder {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: "gaussian_encoder".into(),
            scalars: vec![],
            networks: vec![self.mean_net().clone(), self.std_net().clone()],
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("gaussian_encoder")?;
        match ck.networks.as_slice() {
            [m, s] => Self::from_networks(m.clone(), s.clone()),
            _ => Err(Error::Format("encoder needs 2 networks".into())),
        }
    }
}

impl RnvpFlow {
    /// Scalars hold the dimension followed by every layer's mask.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut scalars = vec![self.dim() as f64];
        let mut networks = Vec::new();
        for l in self.layers() {
            scalars.extend_from_slice(&l.mask);
            networks.push(l.scale.clone());
            networks.push(l.shift.clone());
        }
        Checkpoint {
            kind: "rnvp".into(),
            scalars,
            networks,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("rnvp")?;
        let malformed = || Error::Format("malformed rnvp checkpoint".into());
        let dim = *ck.scalars.first().ok_or_else(malformed)? as usize;
        let n_layers = ck.networks.len() / 2;
        if !ck.networks.len().is_multiple_of(2) || ck.scalars.len() != 1 + n_layers * dim {
            return Err(malformed());
        }
        let layers = (0..n_layers)
            .map(|i| Coupling {
                mask: ck.scalars[1 + i * dim..1 + (i + 1) * dim].to_vec(),
                scale: ck.networks[2 * i].clone(),
                shift: ck.networks[2 * i + 1].clone(),
            })
            .collect();
        Self::from_layers(dim, layers)
    }
}
