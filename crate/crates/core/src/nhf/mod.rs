//! Hamiltonian normalizing flows: volume-preserving density models built
//! from leapfrog-integrated learned Hamiltonians, with momentum treated as
//! a latent variable.

mod flow;
mod objective;
mod prior;
mod targets;
mod train;

pub use flow::{flow_forward, flow_inverse, leapfrog_displacements, log_density, BoundStack, FlowStack};
pub use objective::{
    elbo, elbo_samples, importance_log_marginal, log_sum_exp, marginal_log_density_1d, mean_nll, negative_elbo_with_gradient, BoundRnvpDensity, DensityFlow,
    RnvpDensity,
};
pub use prior::{soft_uniform_normalizer, PriorKind, PriorSpec};
pub use targets::{DensityKind, GaussianMixture};
pub use train::{
    train_flow, train_nhf, train_rnvp, write_curve_csv, CurvePoint, FlowObserver, FlowTraining, FlowTrainSettings,
    NhfConfig, RnvpConfig,
};

/// `ln π(s)` summed over the coordinates of `s`, normalizer included.
pub fn soft_uniform_logpdf(prior: &PriorSpec, s: &[f64]) -> f64 {
    prior.logpdf(s)
}

#[cfg(test)]
mod tests;
