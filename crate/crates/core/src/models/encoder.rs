use std::f64::consts::PI;

use crate::diffgraph::{softplus, Tape, Var};
use crate::error::{check_dim, Result};
use crate::models::mlp::{Activation, BoundMlp, MlpParameters};
use crate::rng::RngStream;

/// Lower bound added to the softplus standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Inverse of softplus for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Diagonal Gaussian `f(p | q) = N(p; μ(q), diag σ(q)²)` with
/// `σ = softplus(net(q)) + STD_FLOOR`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianEncoder {
    mean: MlpParameters,
    std: MlpParameters,
}

impl GaussianEncoder {
    /// ReLU networks `[d, hidden..., d]`.
    pub fn new(dim: usize, hidden: &[usize], rng: &mut RngStream) -> Self {
        let mut sizes = vec![dim];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        Self {
            mean: MlpParameters::new(&sizes, Activation::Relu, rng),
            std: MlpParameters::new(&sizes, Activation::Relu, rng),
        }
    }

    /// An encoder that ignores `q` and returns `N(mean, std²)` in every
    /// coordinate.
    pub fn constant(dim: usize, hidden: &[usize], mean: f64, std: f64) -> Self {
        let mut sizes = vec![dim];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        let mut m = MlpParameters::zeros(&sizes, Activation::Relu);
        let mut s = MlpParameters::zeros(&sizes, Activation::Relu);
        m.layers_mut().last_mut().unwrap().bias.fill(mean);
        s.layers_mut().last_mut().unwrap().bias.fill(softplus_inverse(std - STD_FLOOR));
        Self { mean: m, std: s }
    }

    pub fn dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn mean_net(&self) -> &MlpParameters {
        &self.mean
    }

    pub fn std_net(&self) -> &MlpParameters {
        &self.std
    }

    pub fn from_networks(mean: MlpParameters, std: MlpParameters) -> Result<Self> {
        check_dim(mean.input_dim(), std.input_dim())?;
        check_dim(mean.input_dim(), mean.output_dim())?;
        check_dim(std.input_dim(), std.output_dim())?;
        Ok(Self { mean, std })
    }

    pub fn mean_std(&self, q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mu = self.mean.eval(q)?;
        let sd = self.std.eval(q)?.into_iter().map(|r| softplus(r) + STD_FLOOR).collect();
        Ok((mu, sd))
    }

    /// `ln f(p | q)`
    pub fn log_density(&self, q: &[f64], p: &[f64]) -> Result<f64> {
        check_dim(self.dim(), p.len())?;
        let (mu, sd) = self.mean_std(q)?;
        Ok(p.iter()
            .zip(mu.iter().zip(&sd))
            .map(|(x, (m, s))| {
                let z = (x - m) / s;
                -0.5 * z * z - s.ln() - 0.5 * (2.0 * PI).ln()
            })
            .sum())
    }

    pub fn num_params(&self) -> usize {
        self.mean.num_params() + self.std.num_params()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        self.mean.write_params(out);
        self.std.write_params(out);
    }

    pub fn read_params<'a>(&mut self, src: &'a [f64]) -> Result<&'a [f64]> {
        let rest = self.mean.read_params(src)?;
        self.std.read_params(rest)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundEncoder {
        BoundEncoder {
            mean: self.mean.bind(tape),
            std: self.std.bind(tape),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundEncoder {
    mean: BoundMlp,
    std: BoundMlp,
}

impl BoundEncoder {
    /// Reparameterized draw `p = μ(q) + σ(q)·ε` and `ln f(p | q)`.
    pub fn sample(&self, tape: &mut Tape, q: Var, eps: &[f64]) -> (Var, Var) {
        let n = eps.len();
        let mu = self.mean.forward(tape, q);
        let raw = self.std.forward(tape, q);
        let sp = tape.softplus(raw);
        let floor = tape.filled(n, STD_FLOOR);
        let sd = tape.add(sp, floor);
        let e = tape.constant(eps);
        let noise = tape.mul(sd, e);
        let p = tape.add(mu, noise);
        // ln N(μ + σε; μ, σ) = Σ −ε²/2 − ln σ − ½ ln 2π
        let log_sd = tape.log(sd);
        let sum_log_sd = tape.sum(log_sd);
        let c = -0.5 * eps.iter().map(|x| x * x).sum::<f64>() - 0.5 * n as f64 * (2.0 * PI).ln();
        let neg = tape.neg(sum_log_sd);
        let cv = tape.scalar(c);
        let logf = tape.add(neg, cv);
        (p, logf)
    }

    pub fn param_vars(&self) -> Vec<crate::diffgraph::Var> {
        let mut v = self.mean.param_vars().to_vec();
        v.extend_from_slice(self.std.param_vars());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_encoder_has_requested_moments() {
        let enc = GaussianEncoder::constant(2, &[4], 1.0, 0.5);
        let (mu, sd) = enc.mean_std(&[3.0, -2.0]).unwrap();
        assert_eq!(mu, vec![1.0, 1.0]);
        for s in sd {
            assert!((s - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn std_is_positive() {
        let mut rng = RngStream::new(13);
        let enc = GaussianEncoder::new(2, &[8, 8], &mut rng);
        for _ in 0..50 {
            let q = [rng.uniform_range(-5.0, 5.0), rng.uniform_range(-5.0, 5.0)];
            assert!(enc.mean_std(&q).unwrap().1.iter().all(|s| *s > 0.0));
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let mut rng = RngStream::new(14);
        let enc = GaussianEncoder::new(2, &[8], &mut rng);
        let q = [0.3, -0.4];
        let (mu, sd) = enc.mean_std(&q).unwrap();
        // grid wide enough to hold ±8σ around the mean in each coordinate
        let n = 400;
        let lo: Vec<f64> = (0..2).map(|i| mu[i] - 8.0 * sd[i]).collect();
        let h: Vec<f64> = (0..2).map(|i| 16.0 * sd[i] / n as f64).collect();
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = [lo[0] + (i as f64 + 0.5) * h[0], lo[1] + (j as f64 + 0.5) * h[1]];
                mass += enc.log_density(&q, &p).unwrap().exp() * h[0] * h[1];
            }
        }
        assert!((mass - 1.0).abs() < 1e-2, "{mass}");
    }

    #[test]
    fn tape_sample_matches_plain_density() {
        let mut rng = RngStream::new(15);
        let enc = GaussianEncoder::new(2, &[8], &mut rng);
        let q = [0.7, 0.1];
        let eps = [0.4, -1.3];
        let mut tape = Tape::new();
        let b = enc.bind(&mut tape);
        let qv = tape.input(&q);
        let (p, logf) = b.sample(&mut tape, qv, &eps);
        let p_val = tape.value(p).to_vec();
        let expected = enc.log_density(&q, &p_val).unwrap();
        assert!((tape.scalar_value(logf) - expected).abs() < 1e-12);
    }

    #[test]
    fn softplus_inverse_inverts() {
        for y in [1e-3, 0.5, 1.0, 7.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }
}
