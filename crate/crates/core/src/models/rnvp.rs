use crate::diffgraph::{Tape, Var};
use crate::error::{check_dim, Error, Result};
use crate::models::mlp::{Activation, BoundMlp, MlpParameters};
use crate::rng::RngStream;

/// Log-scales are squashed to `(−SCALE_CLAMP, SCALE_CLAMP)` by a scaled tanh.
pub const SCALE_CLAMP: f64 = 3.0;

/// One affine coupling layer. Coordinates with mask 1 pass through and
/// condition the scale and shift applied to the others:
///
/// `y = m⊙x + (1−m)⊙(x⊙exp(s(m⊙x)) + t(m⊙x))`
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub mask: Vec<f64>,
    pub scale: MlpParameters,
    pub shift: MlpParameters,
}

/// A RealNVP stack of affine couplings. The masks alternate between the
/// first and second half of the coordinates, which for a phase-space vector
/// `[q || p]` means alternately updating `p` given `q` and `q` given `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnvpFlow {
    dim: usize,
    layers: Vec<Coupling>,
}

fn half_mask(dim: usize, layer: usize) -> Vec<f64> {
    let half = dim / 2;
    (0..dim)
        .map(|i| {
            let first = i < half;
            if layer.is_multiple_of(2) == first {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

impl RnvpFlow {
    /// ReLU coupling networks `[dim, hidden..., dim]`.
    pub fn new(dim: usize, n_layers: usize, hidden: &[usize], rng: &mut RngStream) -> Self {
        Self::build(dim, n_layers, hidden, |sizes| MlpParameters::new(sizes, Activation::Relu, rng))
    }

    /// Zero networks: the identity map.
    pub fn identity(dim: usize, n_layers: usize, hidden: &[usize]) -> Self {
        Self::build(dim, n_layers, hidden, |sizes| MlpParameters::zeros(sizes, Activation::Relu))
    }

    fn build(dim: usize, n_layers: usize, hidden: &[usize], mut net: impl FnMut(&[usize]) -> MlpParameters) -> Self {
        assert!(dim >= 2, "coupling layers need at least two coordinates");
        let mut sizes = vec![dim];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        let layers = (0..n_layers)
            .map(|i| Coupling {
                mask: half_mask(dim, i),
                scale: net(&sizes),
                shift: net(&sizes),
            })
            .collect();
        Self { dim, layers }
    }

    pub fn from_layers(dim: usize, layers: Vec<Coupling>) -> Result<Self> {
        for l in &layers {
            check_dim(dim, l.mask.len())?;
            check_dim(dim, l.scale.input_dim())?;
            check_dim(dim, l.scale.output_dim())?;
            check_dim(dim, l.shift.input_dim())?;
            check_dim(dim, l.shift.output_dim())?;
            if l.mask.iter().any(|m| *m != 0.0 && *m != 1.0) {
                return Err(Error::invalid("coupling masks must be binary"));
            }
        }
        Ok(Self { dim, layers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[Coupling] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.scale.num_params() + l.shift.num_params()).sum()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            l.scale.write_params(out);
            l.shift.write_params(out);
        }
    }

    pub fn read_params<'a>(&mut self, src: &'a [f64]) -> Result<&'a [f64]> {
        let mut rest = src;
        for l in &mut self.layers {
            rest = l.scale.read_params(rest)?;
            rest = l.shift.read_params(rest)?;
        }
        Ok(rest)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundRnvp {
        BoundRnvp {
            layers: self
                .layers
                .iter()
                .map(|l| BoundCoupling {
                    mask: l.mask.clone(),
                    scale: l.scale.bind(tape),
                    shift: l.shift.bind(tape),
                })
                .collect(),
        }
    }

    /// Plain evaluation of the forward map and its log-determinant.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let (y, ld) = rnvp_forward(self, xv, &mut tape)?;
        Ok((tape.value(y).to_vec(), tape.scalar_value(ld)))
    }

    /// Plain evaluation of the inverse map and its log-determinant.
    pub fn inverse(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut tape = Tape::new();
        let yv = tape.input(y);
        let (x, ld) = rnvp_inverse(self, yv, &mut tape)?;
        Ok((tape.value(x).to_vec(), tape.scalar_value(ld)))
    }
}

#[derive(Clone, Debug)]
struct BoundCoupling {
    mask: Vec<f64>,
    scale: BoundMlp,
    shift: BoundMlp,
}

impl BoundCoupling {
    /// `(m, 1−m, m⊙x, s, t)` for conditioning input `x`.
    fn conditioners(&self, tape: &mut Tape, x: Var) -> (Var, Var, Var, Var) {
        let m = tape.constant(&self.mask);
        let inv: Vec<f64> = self.mask.iter().map(|v| 1.0 - v).collect();
        let im = tape.constant(&inv);
        let xm = tape.mul(x, m);
        let raw = self.scale.forward(tape, xm);
        let squashed = {
            let r = tape.scale_by(raw, 1.0 / SCALE_CLAMP);
            let th = tape.tanh(r);
            tape.scale_by(th, SCALE_CLAMP)
        };
        let s = tape.mul(squashed, im);
        let t = self.shift.forward(tape, xm);
        let t = tape.mul(t, im);
        (xm, im, s, t)
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> (Var, Var) {
        let (xm, im, s, t) = self.conditioners(tape, x);
        let es = tape.exp(s);
        let xi = tape.mul(x, im);
        let scaled = tape.mul(xi, es);
        let moved = tape.add(scaled, t);
        let y = tape.add(xm, moved);
        let ld = tape.sum(s);
        (y, ld)
    }

    fn inverse(&self, tape: &mut Tape, y: Var) -> (Var, Var) {
        let (ym, im, s, t) = self.conditioners(tape, y);
        let yi = tape.mul(y, im);
        let centered = tape.sub(yi, t);
        let ns = tape.neg(s);
        let ens = tape.exp(ns);
        let unscaled = tape.mul(centered, ens);
        let x = tape.add(ym, unscaled);
        let ld = tape.sum(ns);
        (x, ld)
    }
}

/// An [`RnvpFlow`] bound to a tape.
#[derive(Clone, Debug)]
pub struct BoundRnvp {
    layers: Vec<BoundCoupling>,
}

impl BoundRnvp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> (Var, Var) {
        let mut ld = tape.scalar(0.0);
        let mut h = x;
        for l in &self.layers {
            let (y, d) = l.forward(tape, h);
            ld = tape.add(ld, d);
            h = y;
        }
        (h, ld)
    }

    pub fn inverse(&self, tape: &mut Tape, y: Var) -> (Var, Var) {
        let mut ld = tape.scalar(0.0);
        let mut h = y;
        for l in self.layers.iter().rev() {
            let (x, d) = l.inverse(tape, h);
            ld = tape.add(ld, d);
            h = x;
        }
        (h, ld)
    }

    pub fn param_vars(&self) -> Vec<Var> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(l.scale.param_vars());
            v.extend_from_slice(l.shift.param_vars());
        }
        v
    }
}

/// `(y, ln|det ∂y/∂x|)` for the forward map.
pub fn rnvp_forward(flow: &RnvpFlow, x: Var, tape: &mut Tape) -> Result<(Var, Var)> {
    check_dim(flow.dim, tape.node_len(x))?;
    let b = flow.bind(tape);
    Ok(b.forward(tape, x))
}

/// `(x, ln|det ∂x/∂y|)` for the inverse map.
pub fn rnvp_inverse(flow: &RnvpFlow, y: Var, tape: &mut Tape) -> Result<(Var, Var)> {
    check_dim(flow.dim, tape.node_len(y))?;
    let b = flow.bind(tape);
    Ok(b.inverse(tape, y))
}
