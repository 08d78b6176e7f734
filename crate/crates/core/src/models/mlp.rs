use serde::{Deserialize, Serialize};

use crate::diffgraph::{softplus, Gradients, Tape, Var};
use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Softplus,
    Relu,
    Tanh,
    /// `x²`; lets quadratic Hamiltonians be written down exactly.
    Square,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Softplus => 1,
            Activation::Relu => 2,
            Activation::Tanh => 3,
            Activation::Square => 4,
        }
    }

    pub(crate) fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => Activation::Identity,
            1 => Activation::Softplus,
            2 => Activation::Relu,
            3 => Activation::Tanh,
            4 => Activation::Square,
            other => return Err(Error::Format(format!("unknown activation code {other}"))),
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Softplus => softplus(x),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Square => x * x,
        }
    }

    /// Derivative at pre-activation `x` given the output `y = apply(x)`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Softplus => crate::diffgraph::sigmoid(x),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Square => 2.0 * x,
        }
    }

    fn on_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Softplus => tape.softplus(x),
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Square => tape.square(x),
        }
    }
}

/// One dense layer `act(W x + b)`; `weight` is row-major `outputs × inputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Weights and biases of a multilayer perceptron.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParameters {
    layers: Vec<Layer>,
}

impl MlpParameters {
    /// Layer sizes `[in, h₁, ..., out]`, `hidden` activation on every layer
    /// but the last, which is linear. Weights ~ N(0, 1/fan_in), biases 0.
    pub fn new(sizes: &[usize], hidden: Activation, rng: &mut RngStream) -> Self {
        let mut mlp = Self::zeros(sizes, hidden);
        for layer in &mut mlp.layers {
            let std = 1.0 / (layer.inputs as f64).sqrt();
            for w in &mut layer.weight {
                *w = std * rng.standard_normal();
            }
        }
        mlp
    }

    pub fn zeros(sizes: &[usize], hidden: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                inputs: w[0],
                outputs: w[1],
                weight: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
                activation: if i + 1 == n { Activation::Identity } else { hidden },
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            check_dim(l.inputs * l.outputs, l.weight.len())?;
            check_dim(l.outputs, l.bias.len())?;
            if i > 0 {
                check_dim(layers[i - 1].outputs, l.inputs)?;
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Layer-major, weights then bias.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
    }

    /// Reads parameters in [`MlpParameters::write_params`] order, returning
    /// the unread tail.
    pub fn read_params<'a>(&mut self, src: &'a [f64]) -> Result<&'a [f64]> {
        if src.len() < self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: src.len(),
            });
        }
        let mut rest = src;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weight.len());
            l.weight.copy_from_slice(w);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(rest)
    }

    /// Plain evaluation without a tape.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let mut h = x.to_vec();
        for l in &self.layers {
            let mut next = l.bias.clone();
            for (r, out) in next.iter_mut().enumerate() {
                let row = &l.weight[r * l.inputs..(r + 1) * l.inputs];
                *out += row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
                *out = l.activation.apply(*out);
            }
            h = next;
        }
        Ok(h)
    }

    /// Gradient of a scalar-output network with respect to its input, by
    /// hand-rolled backpropagation.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        check_dim(1, self.output_dim())?;
        // forward, keeping each layer's pre-activation and output
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for l in &self.layers {
            let z: Vec<f64> = (0..l.outputs)
                .map(|r| {
                    let row = &l.weight[r * l.inputs..(r + 1) * l.inputs];
                    l.bias[r] + row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            h = z.iter().map(|&v| l.activation.apply(v)).collect();
            pre.push(z);
            post.push(h.clone());
        }
        let mut delta = vec![1.0];
        for (i, l) in self.layers.iter().enumerate().rev() {
            for (d, (z, y)) in delta.iter_mut().zip(pre[i].iter().zip(&post[i])) {
                *d *= l.activation.derivative(*z, *y);
            }
            let mut below = vec![0.0; l.inputs];
            for (r, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    let row = &l.weight[r * l.inputs..(r + 1) * l.inputs];
                    for (b, w) in below.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
            }
            delta = below;
        }
        Ok(delta)
    }

    /// Puts the parameters on `tape` as differentiable leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let mut vars = Vec::with_capacity(2 * self.layers.len());
        let mut acts = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            vars.push(tape.matrix_input(&l.weight, l.outputs, l.inputs));
            vars.push(tape.input(&l.bias));
            acts.push(l.activation);
        }
        BoundMlp {
            vars,
            activations: acts,
            input_dim: self.input_dim(),
        }
    }
}

/// An [`MlpParameters`] whose weights live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    vars: Vec<Var>,
    activations: Vec<crate::models::Activation>,
    input_dim: usize,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (i, act) in self.activations.iter().enumerate() {
            let z = tape.matvec(self.vars[2 * i], h);
            let z = tape.add(z, self.vars[2 * i + 1]);
            h = act.on_tape(tape, z);
        }
        h
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Parameter leaves in flat-parameter order.
    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Appends `network(x)` to the tape, binding the parameters first.
pub fn mlp_forward(params: &MlpParameters, x: Var, tape: &mut Tape) -> Result<Var> {
    check_dim(params.input_dim(), tape.node_len(x))?;
    let bound = params.bind(tape);
    Ok(bound.forward(tape, x))
}

/// Adds the gradients of `vars` into `out` in order.
pub fn accumulate_grads(grads: &Gradients, vars: &[Var], out: &mut [f64]) {
    let mut offset = 0;
    for v in vars {
        let g = grads.get(*v);
        for (o, x) in out[offset..offset + g.len()].iter_mut().zip(g) {
            *o += x;
        }
        offset += g.len();
    }
    debug_assert_eq!(offset, out.len());
}
