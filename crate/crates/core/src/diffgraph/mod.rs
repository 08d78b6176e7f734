//! Reverse-mode differentiation over small vector-valued expression graphs.
//!
//! A [`Tape`] records nodes in creation order; every node holds a vector
//! (scalars are length-1 vectors, matrices are row-major with a row count).
//! Values are computed eagerly as nodes are added, so a freshly built graph is
//! already evaluated. [`Tape::backward`] runs a numeric reverse sweep.
//! [`Tape::grad_as_graph`] instead emits the gradient as new nodes, which can
//! themselves be differentiated; that is how losses containing `∂H/∂q` and
//! `∂H/∂p` get their parameter gradients.
//!
//! ```
//! use hamflow::diffgraph::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.input(&[3.0]);
//! let y = tape.square(x);
//! assert_eq!(tape.scalar_value(y), 9.0);
//!
//! let dy = tape.grad_as_graph(y, &[x]).unwrap()[0];
//! assert_eq!(tape.scalar_value(dy), 6.0);
//! let d2y = tape.backward(dy).unwrap();
//! assert_eq!(d2y.get(x), &[2.0]);
//! ```

mod symbolic;

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Constant,
    Input,
    Add(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    /// vector times a length-1 node
    Scale(Var, Var),
    /// `W x`
    MatVec(Var, Var),
    /// `Wᵀ x`
    MatTVec(Var, Var),
    /// `a bᵀ`
    Outer(Var, Var),
    Dot(Var, Var),
    Tanh(Var),
    Softplus(Var),
    Sigmoid(Var),
    Relu(Var),
    /// Heaviside step, `1` where the operand is positive. Zero derivative.
    Step(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    /// length-1 node repeated to the node's length
    Broadcast(Var),
    Reciprocal(Var),
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    offset: usize,
    len: usize,
    rows: usize,
}

impl Node {
    fn cols(&self) -> usize {
        self.len.checked_div(self.rows).unwrap_or(0)
    }
}

/// Numerically stable `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
    unbound: usize,
    stale: bool,
    bound: Vec<bool>,
}

/// Adjoints from one [`Tape::backward`] sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<f64>,
    nodes: Vec<(usize, usize)>,
}

impl Gradients {
    /// `∂output/∂var`, shaped like `var`. Zero for nodes the output does not
    /// depend on.
    pub fn get(&self, var: Var) -> &[f64] {
        let (offset, len) = self.nodes[var.index()];
        &self.adjoints[offset..offset + len]
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.get(var)[0]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, values: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(nodes),
            values: Vec::with_capacity(values),
            bound: Vec::with_capacity(nodes),
            ..Self::default()
        }
    }

    /// Drops every node but keeps the allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.bound.clear();
        self.unbound = 0;
        self.stale = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, v: Var) -> Op {
        self.nodes[v.index()].op
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.index()];
        &self.values[n.offset..n.offset + n.len]
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let n = &self.nodes[v.index()];
        assert_eq!(n.len, 1, "scalar_value on a node of length {}", n.len);
        self.values[n.offset]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.index()];
        (n.rows, n.cols())
    }

    pub fn node_len(&self, v: Var) -> usize {
        self.nodes[v.index()].len
    }

    fn push_leaf(&mut self, op: Op, data: &[f64], rows: usize) -> Var {
        let offset = self.values.len();
        self.values.extend_from_slice(data);
        self.nodes.push(Node {
            op,
            offset,
            len: data.len(),
            rows,
        });
        self.bound.push(true);
        Var((self.nodes.len() - 1) as u32)
    }

    pub fn constant(&mut self, data: &[f64]) -> Var {
        self.push_leaf(Op::Constant, data, data.len())
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(&[x])
    }

    pub fn filled(&mut self, len: usize, x: f64) -> Var {
        let offset = self.values.len();
        self.values.resize(offset + len, x);
        self.nodes.push(Node {
            op: Op::Constant,
            offset,
            len,
            rows: len,
        });
        self.bound.push(true);
        Var((self.nodes.len() - 1) as u32)
    }

    /// A differentiable leaf holding `data`.
    pub fn input(&mut self, data: &[f64]) -> Var {
        self.push_leaf(Op::Input, data, data.len())
    }

    /// A differentiable row-major `rows × cols` matrix leaf.
    pub fn matrix_input(&mut self, data: &[f64], rows: usize, cols: usize) -> Var {
        assert_eq!(data.len(), rows * cols, "matrix data does not match {rows}x{cols}");
        self.push_leaf(Op::Input, data, rows)
    }

    /// An input leaf of length `len` whose value must be supplied with
    /// [`Tape::bind`] before [`Tape::forward`]. Until then it reads as zeros.
    pub fn placeholder(&mut self, len: usize) -> Var {
        let v = self.filled(len, 0.0);
        self.nodes[v.index()].op = Op::Input;
        self.bound[v.index()] = false;
        self.unbound += 1;
        self.stale = true;
        v
    }

    /// Overwrites the value of an input leaf. Downstream nodes are stale until
    /// the next [`Tape::forward`].
    pub fn bind(&mut self, v: Var, data: &[f64]) -> Result<()> {
        let node = self.nodes[v.index()];
        if node.op != Op::Input {
            return Err(Error::Graph(format!("node {} is not an input", v.0)));
        }
        if node.len != data.len() {
            return Err(Error::DimensionMismatch {
                expected: node.len,
                got: data.len(),
            });
        }
        self.values[node.offset..node.offset + node.len].copy_from_slice(data);
        if !self.bound[v.index()] {
            self.bound[v.index()] = true;
            self.unbound -= 1;
        }
        self.stale = true;
        Ok(())
    }

    /// Re-evaluates every node in creation order.
    pub fn forward(&mut self) -> Result<()> {
        if self.unbound > 0 {
            let idx = self.bound.iter().position(|b| !b).unwrap();
            return Err(Error::Graph(format!("input node {idx} is unbound")));
        }
        for i in 0..self.nodes.len() {
            let node = self.nodes[i];
            if !matches!(node.op, Op::Constant | Op::Input) {
                self.eval(i);
            }
            if self.values[node.offset..node.offset + node.len]
                .iter()
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite(format!("graph node {i} ({:?})", node.op)));
            }
        }
        self.stale = false;
        Ok(())
    }

    fn push_op(&mut self, op: Op, len: usize, rows: usize) -> Var {
        let offset = self.values.len();
        self.values.resize(offset + len, 0.0);
        self.nodes.push(Node { op, offset, len, rows });
        self.bound.push(true);
        let i = self.nodes.len() - 1;
        self.eval(i);
        Var(i as u32)
    }

    fn range(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.index()];
        (n.offset, n.len)
    }

    fn eval(&mut self, i: usize) {
        let node = self.nodes[i];
        let (prev, out) = self.values.split_at_mut(node.offset);
        let out = &mut out[..node.len];
        let nodes = &self.nodes;
        let val = |v: Var| {
            let n = &nodes[v.index()];
            &prev[n.offset..n.offset + n.len]
        };
        let map = |out: &mut [f64], a: &[f64], f: fn(f64) -> f64| {
            for (o, x) in out.iter_mut().zip(a) {
                *o = f(*x);
            }
        };
        match node.op {
            Op::Constant | Op::Input => {}
            Op::Add(a, b) => {
                for ((o, x), y) in out.iter_mut().zip(val(a)).zip(val(b)) {
                    *o = x + y;
                }
            }
            Op::Mul(a, b) => {
                for ((o, x), y) in out.iter_mut().zip(val(a)).zip(val(b)) {
                    *o = x * y;
                }
            }
            Op::Neg(a) => map(out, val(a), |x| -x),
            Op::Scale(a, s) => {
                let s = val(s)[0];
                for (o, x) in out.iter_mut().zip(val(a)) {
                    *o = x * s;
                }
            }
            Op::MatVec(w, x) => {
                let cols = nodes[w.index()].cols();
                let (w, x) = (val(w), val(x));
                for (r, o) in out.iter_mut().enumerate() {
                    let row = &w[r * cols..(r + 1) * cols];
                    *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            Op::MatTVec(w, x) => {
                let cols = nodes[w.index()].cols();
                let (w, x) = (val(w), val(x));
                out.fill(0.0);
                for (r, xr) in x.iter().enumerate() {
                    let row = &w[r * cols..(r + 1) * cols];
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += a * xr;
                    }
                }
            }
            Op::Outer(a, b) => {
                let (a, b) = (val(a), val(b));
                let cols = b.len();
                for (r, ar) in a.iter().enumerate() {
                    for (c, bc) in b.iter().enumerate() {
                        out[r * cols + c] = ar * bc;
                    }
                }
            }
            Op::Dot(a, b) => out[0] = val(a).iter().zip(val(b)).map(|(x, y)| x * y).sum(),
            Op::Tanh(a) => map(out, val(a), f64::tanh),
            Op::Softplus(a) => map(out, val(a), softplus),
            Op::Sigmoid(a) => map(out, val(a), sigmoid),
            Op::Relu(a) => map(out, val(a), |x| if x > 0.0 { x } else { 0.0 }),
            Op::Step(a) => map(out, val(a), |x| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Exp(a) => map(out, val(a), f64::exp),
            Op::Log(a) => map(out, val(a), f64::ln),
            Op::Square(a) => map(out, val(a), |x| x * x),
            Op::Sum(a) => out[0] = val(a).iter().sum(),
            Op::Broadcast(a) => out.fill(val(a)[0]),
            Op::Reciprocal(a) => map(out, val(a), f64::recip),
        }
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> usize {
        let (la, lb) = (self.node_len(a), self.node_len(b));
        assert_eq!(la, lb, "{what}: operand lengths differ ({la} vs {lb})");
        la
    }

    fn unary(&mut self, op: Op, a: Var) -> Var {
        let len = self.node_len(a);
        let rows = self.nodes[a.index()].rows;
        self.push_op(op, len, rows)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let len = self.same_len(a, b, "add");
        let rows = self.nodes[a.index()].rows;
        self.push_op(Op::Add(a, b), len, rows)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let len = self.same_len(a, b, "mul");
        let rows = self.nodes[a.index()].rows;
        self.push_op(Op::Mul(a, b), len, rows)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Op::Neg(a), a)
    }

    /// `a · s` for a length-1 node `s`.
    pub fn scale(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.node_len(s), 1, "scale: factor must be length 1");
        let len = self.node_len(a);
        let rows = self.nodes[a.index()].rows;
        self.push_op(Op::Scale(a, s), len, rows)
    }

    /// `a · c` for a constant `c`.
    pub fn scale_by(&mut self, a: Var, c: f64) -> Var {
        let s = self.scalar(c);
        self.scale(a, s)
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (rows, cols) = self.shape(w);
        assert_eq!(self.node_len(x), cols, "matvec: {rows}x{cols} matrix times length-{} vector", self.node_len(x));
        self.push_op(Op::MatVec(w, x), rows, rows)
    }

    pub fn mattvec(&mut self, w: Var, x: Var) -> Var {
        let (rows, cols) = self.shape(w);
        assert_eq!(self.node_len(x), rows, "mattvec: transpose of {rows}x{cols} matrix times length-{} vector", self.node_len(x));
        self.push_op(Op::MatTVec(w, x), cols, cols)
    }

    pub fn outer(&mut self, a: Var, b: Var) -> Var {
        let (la, lb) = (self.node_len(a), self.node_len(b));
        self.push_op(Op::Outer(a, b), la * lb, la)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b, "dot");
        self.push_op(Op::Dot(a, b), 1, 1)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Op::Tanh(a), a)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Op::Softplus(a), a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Op::Sigmoid(a), a)
    }

    /// Subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Op::Relu(a), a)
    }

    pub fn step(&mut self, a: Var) -> Var {
        self.unary(Op::Step(a), a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Op::Exp(a), a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Op::Log(a), a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Op::Square(a), a)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push_op(Op::Sum(a), 1, 1)
    }

    pub fn broadcast(&mut self, a: Var, len: usize) -> Var {
        assert_eq!(self.node_len(a), 1, "broadcast: operand must be length 1");
        self.push_op(Op::Broadcast(a), len, len)
    }

    pub fn reciprocal(&mut self, a: Var) -> Var {
        self.unary(Op::Reciprocal(a), a)
    }

    /// `a + c·b`
    pub fn axpy(&mut self, a: Var, c: f64, b: Var) -> Var {
        let cb = self.scale_by(b, c);
        self.add(a, cb)
    }

    /// Whether every entry of `v` is finite.
    pub fn is_finite(&self, v: Var) -> bool {
        self.value(v).iter().all(|x| x.is_finite())
    }

    /// Reverse sweep from the length-1 node `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.stale {
            return Err(Error::Graph("backward called before forward on rebound inputs".into()));
        }
        let out = self.nodes[output.index()];
        if out.len != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar output, node {} has length {}",
                output.0, out.len
            )));
        }
        let mut adj = vec![0.0; self.values.len()];
        let mut reached = vec![false; output.index() + 1];
        adj[out.offset] = 1.0;
        reached[output.index()] = true;
        let vals = &self.values;
        for i in (0..=output.index()).rev() {
            if !reached[i] {
                continue;
            }
            let node = self.nodes[i];
            let (before, here) = adj.split_at_mut(node.offset);
            let g = &here[..node.len];
            let r = |v: Var| self.range(v);
            let mut touch = |v: Var| reached[v.index()] = true;
            match node.op {
                Op::Constant | Op::Input | Op::Step(_) => {}
                Op::Add(a, b) => {
                    touch(a);
                    touch(b);
                    let ((oa, _), (ob, _)) = (r(a), r(b));
                    for k in 0..node.len {
                        before[oa + k] += g[k];
                        before[ob + k] += g[k];
                    }
                }
                Op::Mul(a, b) => {
                    touch(a);
                    touch(b);
                    let ((oa, _), (ob, _)) = (r(a), r(b));
                    for k in 0..node.len {
                        before[oa + k] += g[k] * vals[ob + k];
                        before[ob + k] += g[k] * vals[oa + k];
                    }
                }
                Op::Neg(a) => {
                    touch(a);
                    let (oa, _) = r(a);
                    for k in 0..node.len {
                        before[oa + k] -= g[k];
                    }
                }
                Op::Scale(a, s) => {
                    touch(a);
                    touch(s);
                    let ((oa, _), (os, _)) = (r(a), r(s));
                    let sv = vals[os];
                    let mut gs = 0.0;
                    for k in 0..node.len {
                        before[oa + k] += g[k] * sv;
                        gs += g[k] * vals[oa + k];
                    }
                    before[os] += gs;
                }
                Op::MatVec(w, x) => {
                    touch(w);
                    touch(x);
                    let cols = self.nodes[w.index()].cols();
                    let ((ow, _), (ox, _)) = (r(w), r(x));
                    for (row, gr) in g.iter().enumerate() {
                        if *gr == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            before[ox + c] += vals[ow + row * cols + c] * gr;
                            before[ow + row * cols + c] += gr * vals[ox + c];
                        }
                    }
                }
                Op::MatTVec(w, x) => {
                    touch(w);
                    touch(x);
                    let (rows, cols) = (self.nodes[w.index()].rows, self.nodes[w.index()].cols());
                    let ((ow, _), (ox, _)) = (r(w), r(x));
                    for row in 0..rows {
                        let xr = vals[ox + row];
                        let mut acc = 0.0;
                        for c in 0..cols {
                            acc += vals[ow + row * cols + c] * g[c];
                            before[ow + row * cols + c] += xr * g[c];
                        }
                        before[ox + row] += acc;
                    }
                }
                Op::Outer(a, b) => {
                    touch(a);
                    touch(b);
                    let ((oa, la), (ob, lb)) = (r(a), r(b));
                    for i in 0..la {
                        for j in 0..lb {
                            let gij = g[i * lb + j];
                            before[oa + i] += gij * vals[ob + j];
                            before[ob + j] += gij * vals[oa + i];
                        }
                    }
                }
                Op::Dot(a, b) => {
                    touch(a);
                    touch(b);
                    let ((oa, la), (ob, _)) = (r(a), r(b));
                    for k in 0..la {
                        before[oa + k] += g[0] * vals[ob + k];
                        before[ob + k] += g[0] * vals[oa + k];
                    }
                }
                Op::Sum(a) => {
                    touch(a);
                    let (oa, la) = r(a);
                    for k in 0..la {
                        before[oa + k] += g[0];
                    }
                }
                Op::Broadcast(a) => {
                    touch(a);
                    let (oa, _) = r(a);
                    before[oa] += g.iter().sum::<f64>();
                }
                Op::Tanh(a)
                | Op::Softplus(a)
                | Op::Sigmoid(a)
                | Op::Relu(a)
                | Op::Exp(a)
                | Op::Log(a)
                | Op::Square(a)
                | Op::Reciprocal(a) => {
                    touch(a);
                    let (oa, _) = r(a);
                    let y = &vals[node.offset..node.offset + node.len];
                    for k in 0..node.len {
                        let x = vals[oa + k];
                        let d = match node.op {
                            Op::Tanh(_) => 1.0 - y[k] * y[k],
                            Op::Softplus(_) => sigmoid(x),
                            Op::Sigmoid(_) => y[k] * (1.0 - y[k]),
                            Op::Relu(_) => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Op::Exp(_) => y[k],
                            Op::Log(_) => 1.0 / x,
                            Op::Square(_) => 2.0 * x,
                            Op::Reciprocal(_) => -y[k] * y[k],
                            _ => unreachable!(),
                        };
                        before[oa + k] += g[k] * d;
                    }
                }
            }
        }
        Ok(Gradients {
            adjoints: adj,
            nodes: self.nodes.iter().map(|n| (n.offset, n.len)).collect(),
        })
    }
}

/// Worst relative disagreement between `grad · u` and the central difference
/// `(f(θ + h·u) − f(θ − h·u)) / 2h` over `n_dirs` standard normal directions `u`.
/// The denominator is floored at `1e-8`.
pub fn directional_gradient_error(
    theta: &[f64],
    grad: &[f64],
    n_dirs: usize,
    h: f64,
    rng: &mut crate::rng::RngStream,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    crate::error::check_dim(theta.len(), grad.len())?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let mut worst: f64 = 0.0;
    for _ in 0..n_dirs {
        let u: Vec<f64> = (0..theta.len()).map(|_| rng.standard_normal()).collect();
        let plus: Vec<f64> = theta.iter().zip(&u).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = theta.iter().zip(&u).map(|(a, b)| a - h * b).collect();
        let fd = (f(&plus)? - f(&minus)?) / (2.0 * h);
        let an: f64 = grad.iter().zip(&u).map(|(a, b)| a * b).sum();
        worst = worst.max((fd - an).abs() / an.abs().max(fd.abs()).max(1e-8));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
