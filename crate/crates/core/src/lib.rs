//! Symplectic Hamiltonian dynamics, learned separable Hamiltonians and
//! Hamiltonian normalizing flows.
//!
//! The guide in `book/` walks through each module; its code blocks run as
//! doc-tests of this crate.

// `!(x > 0.0)` is how NaN gets rejected along with the bad values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod error;
pub mod integrators;
pub mod linalg;
pub mod phase;
pub mod rng;
pub mod systems;
pub mod datagen;
pub mod diffgraph;
pub mod models;
pub mod nhf;
pub mod learner;
pub mod reports;
pub mod selftest;
mod train;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/phase-space.md")]
    mod phase_space {}
    #[doc = include_str!("../../../book/src/integrators.md")]
    mod integrators {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/flows.md")]
    mod flows {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
