use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diffgraph::{softplus, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    SoftUniform,
    StandardNormal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct PriorFields {
    kind: PriorKind,
    #[serde(default = "default_sigma")]
    sigma: f64,
    #[serde(default = "default_beta")]
    beta: f64,
}

// A compact base keeps the learned density inside a small window; on a wide
// flat plateau the flow gets no gradient at all.
fn default_sigma() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    4.0
}

/// Factorized base density `π(s₀)` over phase space. The soft-uniform
/// density per coordinate is `∝ σ(β(s + w/2))·σ(−β(s − w/2))` for width `w`;
/// its normalizer is computed once by quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorFields", into = "PriorFields")]
pub struct PriorSpec {
    kind: PriorKind,
    sigma: f64,
    beta: f64,
    log_norm: f64,
}

impl TryFrom<PriorFields> for PriorSpec {
    type Error = Error;

    fn try_from(f: PriorFields) -> Result<Self> {
        match f.kind {
            PriorKind::SoftUniform => Self::soft_uniform(f.sigma, f.beta),
            PriorKind::StandardNormal => Ok(Self::standard_normal()),
        }
    }
}

impl From<PriorSpec> for PriorFields {
    fn from(p: PriorSpec) -> Self {
        Self {
            kind: p.kind,
            sigma: p.sigma,
            beta: p.beta,
        }
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self::soft_uniform(default_sigma(), default_beta()).expect("valid defaults")
    }
}

/// `ln[σ(β(s + w/2))·σ(−β(s − w/2))]`.
fn log_bump(s: f64, sigma: f64, beta: f64) -> f64 {
    -softplus(-beta * (s + 0.5 * sigma)) - softplus(beta * (s - 0.5 * sigma))
}

impl PriorSpec {
    pub fn soft_uniform(sigma: f64, beta: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid("soft-uniform prior needs sigma > 0 and beta > 0"));
        }
        Ok(Self {
            kind: PriorKind::SoftUniform,
            sigma,
            beta,
            log_norm: soft_uniform_normalizer(sigma, beta).ln(),
        })
    }

    pub fn standard_normal() -> Self {
        Self {
            kind: PriorKind::StandardNormal,
            sigma: 1.0,
            beta: 1.0,
            log_norm: 0.5 * (2.0 * PI).ln(),
        }
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Per-coordinate normalizing constant `ln Z`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    pub fn logpdf(&self, s: &[f64]) -> f64 {
        let unnorm: f64 = match self.kind {
            PriorKind::SoftUniform => s.iter().map(|&x| log_bump(x, self.sigma, self.beta)).sum(),
            PriorKind::StandardNormal => s.iter().map(|x| -0.5 * x * x).sum(),
        };
        unnorm - s.len() as f64 * self.log_norm
    }

    /// `ln π` of the vector `s` as a tape node.
    pub fn logpdf_on_tape(&self, tape: &mut Tape, s: Var) -> Var {
        let n = tape.node_len(s);
        let unnorm = match self.kind {
            PriorKind::SoftUniform => {
                let half = tape.filled(n, 0.5 * self.sigma);
                let a = tape.add(s, half);
                let a = tape.scale_by(a, -self.beta);
                let b = tape.sub(s, half);
                let b = tape.scale_by(b, self.beta);
                let sa = tape.softplus(a);
                let sb = tape.softplus(b);
                let both = tape.add(sa, sb);
                let total = tape.sum(both);
                tape.neg(total)
            }
            PriorKind::StandardNormal => {
                let sq = tape.dot(s, s);
                tape.scale_by(sq, -0.5)
            }
        };
        let c = tape.scalar(-(n as f64) * self.log_norm);
        tape.add(unnorm, c)
    }

    /// Independent draw of `n` coordinates.
    pub fn sample(&self, rng: &mut RngStream, n: usize) -> Vec<f64> {
        match self.kind {
            PriorKind::StandardNormal => (0..n).map(|_| rng.standard_normal()).collect(),
            PriorKind::SoftUniform => {
                // rejection from a box; the unnormalized density is at most 1
                let reach = 0.5 * self.sigma + 40.0 / self.beta;
                (0..n)
                    .map(|_| loop {
                        let x = rng.uniform_range(-reach, reach);
                        if rng.uniform().ln() < log_bump(x, self.sigma, self.beta) {
                            break x;
                        }
                    })
                    .collect()
            }
        }
    }
}

/// `∫ σ(β(s + w/2))·σ(−β(s − w/2)) ds` by composite Simpson's rule over a
/// range beyond which the integrand is below `e⁻⁴⁰`.
pub fn soft_uniform_normalizer(sigma: f64, beta: f64) -> f64 {
    let reach = 0.5 * sigma + 40.0 / beta;
    let n = 200_000;
    let h = 2.0 * reach / n as f64;
    let f = |i: usize| log_bump(-reach + i as f64 * h, sigma, beta).exp();
    let mut acc = f(0) + f(n);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 * f(i) } else { 2.0 * f(i) };
    }
    acc * h / 3.0
}
