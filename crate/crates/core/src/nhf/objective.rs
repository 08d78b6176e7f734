use crate::diffgraph::{Tape, Var};
use crate::error::{check_dim, Error, Result};
use crate::models::{accumulate_grads, BoundEncoder, BoundRnvp, GaussianEncoder, RnvpFlow};
use crate::phase::PhaseState;
use crate::rng::RngStream;

use super::flow::{BoundStack, FlowStack};
use super::prior::PriorSpec;

/// An invertible map from a base phase space onto the augmented data space
/// `(q, p)`, trainable with the momentum-marginalizing bound.
pub trait DensityFlow: Clone + Send + Sync {
    type Bound: Clone;

    /// Dimension `d` of the observed `q`.
    fn data_dim(&self) -> usize;
    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, flat: &[f64]) -> Result<()>;
    fn bind(&self, tape: &mut Tape) -> Self::Bound;
    fn param_vars(bound: &Self::Bound) -> Vec<Var>;

    /// Maps `(q, p)` back to the base space. Returns the base coordinates
    /// (pieces whose prior log-densities add up) and `ln|det ∂s₀/∂s|` when
    /// it is not identically zero.
    fn inverse_on_tape(bound: &Self::Bound, tape: &mut Tape, q: Var, p: Var) -> (Vec<Var>, Option<Var>);

    /// Plain inverse: concatenated base state and its log-determinant.
    fn inverse_state(&self, s: &PhaseState) -> Result<(Vec<f64>, f64)>;

    /// Draws `s = f(s₀)` with `s₀ ~ π`.
    fn sample(&self, prior: &PriorSpec, rng: &mut RngStream) -> Result<PhaseState>;

    /// Exact joint log-density of a phase-space point.
    fn log_density(&self, prior: &PriorSpec, s: &PhaseState) -> Result<f64> {
        let (base, logdet) = self.inverse_state(s)?;
        Ok(prior.logpdf(&base) + logdet)
    }
}

impl DensityFlow for FlowStack {
    type Bound = BoundStack;

    fn data_dim(&self) -> usize {
        self.dim()
    }

    fn num_params(&self) -> usize {
        FlowStack::num_params(self)
    }

    fn params(&self) -> Vec<f64> {
        FlowStack::params(self)
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        FlowStack::set_params(self, flat)
    }

    fn bind(&self, tape: &mut Tape) -> BoundStack {
        FlowStack::bind(self, tape)
    }

    fn param_vars(bound: &BoundStack) -> Vec<Var> {
        bound.param_vars()
    }

    fn inverse_on_tape(bound: &BoundStack, tape: &mut Tape, q: Var, p: Var) -> (Vec<Var>, Option<Var>) {
        let (q0, p0) = bound.inverse(tape, q, p);
        (vec![q0, p0], None)
    }

    fn inverse_state(&self, s: &PhaseState) -> Result<(Vec<f64>, f64)> {
        Ok((self.inverse(s)?.concat(), 0.0))
    }

    fn sample(&self, prior: &PriorSpec, rng: &mut RngStream) -> Result<PhaseState> {
        let d = self.dim();
        let s0 = PhaseState::new(prior.sample(rng, d), prior.sample(rng, d))?;
        self.forward(&s0)
    }
}

/// RealNVP over the concatenated `[q || p]`, used as a baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct RnvpDensity {
    flow: RnvpFlow,
}

#[derive(Clone, Debug)]
pub struct BoundRnvpDensity {
    flow: BoundRnvp,
    embed_q: Var,
    embed_p: Var,
}

impl RnvpDensity {
    /// `data_dim` is `d`; the flow acts on `2d` coordinates.
    pub fn new(data_dim: usize, n_layers: usize, hidden: &[usize], rng: &mut RngStream) -> Self {
        Self {
            flow: RnvpFlow::new(2 * data_dim, n_layers, hidden, rng),
        }
    }

    pub fn from_flow(flow: RnvpFlow) -> Result<Self> {
        if !flow.dim().is_multiple_of(2) {
            return Err(Error::invalid("phase-space RNVP needs an even dimension"));
        }
        Ok(Self { flow })
    }

    pub fn flow(&self) -> &RnvpFlow {
        &self.flow
    }
}

/// `2d × d` matrix placing a `d`-vector in the first or second half.
fn embedding(d: usize, second: bool) -> Vec<f64> {
    let mut m = vec![0.0; 2 * d * d];
    let off = if second { d } else { 0 };
    for i in 0..d {
        m[(i + off) * d + i] = 1.0;
    }
    m
}

impl DensityFlow for RnvpDensity {
    type Bound = BoundRnvpDensity;

    fn data_dim(&self) -> usize {
        self.flow.dim() / 2
    }

    fn num_params(&self) -> usize {
        self.flow.num_params()
    }

    fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.flow.write_params(&mut v);
        v
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        let rest = self.flow.read_params(flat)?;
        check_dim(0, rest.len())
    }

    fn bind(&self, tape: &mut Tape) -> BoundRnvpDensity {
        let d = self.data_dim();
        BoundRnvpDensity {
            flow: self.flow.bind(tape),
            embed_q: tape.matrix_input(&embedding(d, false), 2 * d, d),
            embed_p: tape.matrix_input(&embedding(d, true), 2 * d, d),
        }
    }

    fn param_vars(bound: &BoundRnvpDensity) -> Vec<Var> {
        bound.flow.param_vars()
    }

    fn inverse_on_tape(bound: &BoundRnvpDensity, tape: &mut Tape, q: Var, p: Var) -> (Vec<Var>, Option<Var>) {
        let a = tape.matvec(bound.embed_q, q);
        let b = tape.matvec(bound.embed_p, p);
        let x = tape.add(a, b);
        let (z, logdet) = bound.flow.inverse(tape, x);
        (vec![z], Some(logdet))
    }

    fn inverse_state(&self, s: &PhaseState) -> Result<(Vec<f64>, f64)> {
        check_dim(self.data_dim(), s.dim())?;
        self.flow.inverse(&s.concat())
    }

    fn sample(&self, prior: &PriorSpec, rng: &mut RngStream) -> Result<PhaseState> {
        let z = prior.sample(rng, self.flow.dim());
        let (x, _) = self.flow.forward(&z)?;
        crate::phase::state_split(&x)
    }
}

/// Appends the Monte Carlo bound `mean_k [ln p(q, p_k) − ln f(p_k | q)]`
/// with `p_k = μ(q) + σ(q)·ε_k`.
pub(crate) fn elbo_on_tape<F: DensityFlow>(
    flow: &F::Bound,
    encoder: &BoundEncoder,
    prior: &PriorSpec,
    tape: &mut Tape,
    q_t: &[f64],
    eps: &[Vec<f64>],
) -> Var {
    let q = tape.constant(q_t);
    let mut total: Option<Var> = None;
    for e in eps {
        let (p, logf) = encoder.sample(tape, q, e);
        let (base, logdet) = F::inverse_on_tape(flow, tape, q, p);
        let mut lp = prior.logpdf_on_tape(tape, base[0]);
        for &b in &base[1..] {
            let more = prior.logpdf_on_tape(tape, b);
            lp = tape.add(lp, more);
        }
        if let Some(ld) = logdet {
            lp = tape.add(lp, ld);
        }
        let term = tape.sub(lp, logf);
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    tape.scale_by(total.expect("at least one sample"), 1.0 / eps.len() as f64)
}

/// Negative ELBO of `q_t` for fixed noise draws `eps`, with its gradient over
/// the flow parameters followed by the encoder parameters.
pub fn negative_elbo_with_gradient<F: DensityFlow>(
    flow: &F,
    encoder: &GaussianEncoder,
    prior: &PriorSpec,
    q_t: &[f64],
    eps: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    if eps.is_empty() {
        return Err(Error::invalid("elbo needs at least one sample"));
    }
    check_dim(flow.data_dim(), q_t.len())?;
    check_dim(flow.data_dim(), encoder.dim())?;
    for e in eps {
        check_dim(q_t.len(), e.len())?;
    }
    let mut tape = Tape::new();
    let fb = flow.bind(&mut tape);
    let eb = encoder.bind(&mut tape);
    let bound = elbo_on_tape::<F>(&fb, &eb, prior, &mut tape, q_t, eps);
    let loss = tape.neg(bound);
    let value = tape.scalar_value(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite("negative elbo".into()));
    }
    let g = tape.backward(loss)?;
    let mut out = vec![0.0; flow.num_params() + encoder.num_params()];
    let mut vars = F::param_vars(&fb);
    vars.extend(eb.param_vars());
    accumulate_grads(&g, &vars, &mut out);
    Ok((value, out))
}

pub(crate) fn draw_eps(rng: &mut RngStream, n_samples: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n_samples).map(|_| (0..d).map(|_| rng.standard_normal()).collect()).collect()
}

/// Monte Carlo ELBO of one observation `q_t` with `n_samples` reparameterized
/// momentum draws.
pub fn elbo<F: DensityFlow>(
    flow: &F,
    prior: &PriorSpec,
    encoder: &GaussianEncoder,
    q_t: &[f64],
    rng: &mut RngStream,
    n_samples: usize,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::invalid("elbo needs at least one sample"));
    }
    check_dim(flow.data_dim(), q_t.len())?;
    check_dim(flow.data_dim(), encoder.dim())?;
    let eps = draw_eps(rng, n_samples, q_t.len());
    let mut tape = Tape::new();
    let fb = flow.bind(&mut tape);
    let eb = encoder.bind(&mut tape);
    let v = elbo_on_tape::<F>(&fb, &eb, prior, &mut tape, q_t, &eps);
    let value = tape.scalar_value(v);
    if !value.is_finite() {
        return Err(Error::NonFinite("elbo".into()));
    }
    Ok(value)
}

/// Per-sample ELBO terms, for standard errors.
pub fn elbo_samples<F: DensityFlow>(
    flow: &F,
    prior: &PriorSpec,
    encoder: &GaussianEncoder,
    q_t: &[f64],
    rng: &mut RngStream,
    n_samples: usize,
) -> Result<Vec<f64>> {
    (0..n_samples).map(|_| elbo(flow, prior, encoder, q_t, rng, 1)).collect()
}

/// `ln ∫ p(q, p) dp` for one-dimensional `q` by the trapezoid rule over
/// `p ∈ [−half_width, half_width]` with `n` points, in log-sum-exp form.
pub fn marginal_log_density_1d<F: DensityFlow>(flow: &F, prior: &PriorSpec, q: f64, half_width: f64, n: usize) -> Result<f64> {
    check_dim(1, flow.data_dim())?;
    if n < 2 {
        return Err(Error::invalid("quadrature needs at least two points"));
    }
    let h = 2.0 * half_width / (n - 1) as f64;
    let logs = (0..n)
        .map(|i| {
            let p = -half_width + i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            Ok(flow.log_density(prior, &PhaseState::new(vec![q], vec![p])?)? + (w * h).ln())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(log_sum_exp(&logs))
}

/// Importance-sampled `ln p(q)` with the encoder as proposal and `k` draws.
pub fn importance_log_marginal<F: DensityFlow>(
    flow: &F,
    prior: &PriorSpec,
    encoder: &GaussianEncoder,
    q: &[f64],
    rng: &mut RngStream,
    k: usize,
) -> Result<f64> {
    let (mu, sd) = encoder.mean_std(q)?;
    let logs = (0..k)
        .map(|_| {
            let p: Vec<f64> = mu.iter().zip(&sd).map(|(m, s)| m + s * rng.standard_normal()).collect();
            let lf = encoder.log_density(q, &p)?;
            Ok(flow.log_density(prior, &PhaseState::new(q.to_vec(), p)?)? - lf)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(log_sum_exp(&logs) - (k as f64).ln())
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Average negative marginal log-likelihood of `xs`. One-dimensional data
/// is marginalized over `p ∈ [−10, 10]` by an 801-point trapezoid rule;
/// higher dimensions use 256 importance draws from the encoder.
pub fn mean_nll<F: DensityFlow>(
    flow: &F,
    prior: &PriorSpec,
    encoder: &GaussianEncoder,
    xs: &[Vec<f64>],
    rng: &mut RngStream,
) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::invalid("no points to score"));
    }
    let mut total = 0.0;
    for x in xs {
        check_dim(flow.data_dim(), x.len())?;
        total -= if x.len() == 1 {
            marginal_log_density_1d(flow, prior, x[0], 10.0, 801)?
        } else {
            importance_log_marginal(flow, prior, encoder, x, rng, 256)?
        };
    }
    Ok(total / xs.len() as f64)
}
