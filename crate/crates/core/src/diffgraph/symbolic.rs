use super::{Op, Tape, Var};
use crate::error::{Error, Result};

impl Tape {
    /// Gradient of the length-1 node `output` with respect to each of `wrt`,
    /// emitted as new nodes on this tape. The returned nodes are ordinary
    /// graph nodes, so a later [`Tape::backward`] through them yields
    /// second derivatives.
    pub fn grad_as_graph(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.node_len(output) != 1 {
            return Err(Error::Graph(format!(
                "grad_as_graph needs a scalar output, node {} has length {}",
                output.index(),
                self.node_len(output)
            )));
        }
        let last = output.index();
        // nodes on a path from some wrt node; nothing before the earliest
        // wrt node can be on one
        let first = wrt.iter().map(|w| w.index()).min().unwrap_or(last + 1).min(last + 1);
        let mut depends = vec![false; last + 1];
        for w in wrt {
            if w.index() <= last {
                depends[w.index()] = true;
            }
        }
        for i in first..=last {
            if depends[i] {
                continue;
            }
            depends[i] = operands(self.nodes[i].op)
                .iter()
                .flatten()
                .any(|v| depends[v.index()]);
        }

        let mut adj: Vec<Option<Var>> = vec![None; last + 1];
        adj[last] = Some(self.scalar(1.0));

        for i in (first..=last).rev() {
            let Some(g) = adj[i] else { continue };
            if !depends[i] {
                continue;
            }
            let y = Var(i as u32);
            let op = self.nodes[i].op;
            let mut contributions: Vec<(Var, Var)> = Vec::with_capacity(2);
            let wants = |v: Var| depends[v.index()];
            match op {
                Op::Constant | Op::Input | Op::Step(_) => {}
                Op::Add(a, b) => {
                    if wants(a) {
                        contributions.push((a, g));
                    }
                    if wants(b) {
                        contributions.push((b, g));
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        contributions.push((a, self.mul(g, b)));
                    }
                    if wants(b) {
                        contributions.push((b, self.mul(g, a)));
                    }
                }
                Op::Neg(a) => contributions.push((a, self.neg(g))),
                Op::Scale(a, s) => {
                    if wants(a) {
                        contributions.push((a, self.scale(g, s)));
                    }
                    if wants(s) {
                        contributions.push((s, self.dot(g, a)));
                    }
                }
                Op::MatVec(w, x) => {
                    if wants(x) {
                        contributions.push((x, self.mattvec(w, g)));
                    }
                    if wants(w) {
                        contributions.push((w, self.outer_matrix(g, x, w)));
                    }
                }
                Op::MatTVec(w, x) => {
                    if wants(x) {
                        contributions.push((x, self.matvec(w, g)));
                    }
                    if wants(w) {
                        contributions.push((w, self.outer_matrix(x, g, w)));
                    }
                }
                Op::Outer(a, b) => {
                    let (rows, cols) = (self.node_len(a), self.node_len(b));
                    let gm = self.as_matrix(g, rows, cols);
                    if wants(a) {
                        contributions.push((a, self.matvec(gm, b)));
                    }
                    if wants(b) {
                        contributions.push((b, self.mattvec(gm, a)));
                    }
                }
                Op::Dot(a, b) => {
                    if wants(a) {
                        contributions.push((a, self.scale(b, g)));
                    }
                    if wants(b) {
                        contributions.push((b, self.scale(a, g)));
                    }
                }
                Op::Tanh(a) => {
                    let y2 = self.square(y);
                    let one = self.filled(self.node_len(a), 1.0);
                    let d = self.sub(one, y2);
                    contributions.push((a, self.mul(g, d)));
                }
                Op::Softplus(a) => {
                    let d = self.sigmoid(a);
                    contributions.push((a, self.mul(g, d)));
                }
                Op::Sigmoid(a) => {
                    let one = self.filled(self.node_len(a), 1.0);
                    let om = self.sub(one, y);
                    let d = self.mul(y, om);
                    contributions.push((a, self.mul(g, d)));
                }
                Op::Relu(a) => {
                    let d = self.step(a);
                    contributions.push((a, self.mul(g, d)));
                }
                Op::Exp(a) => contributions.push((a, self.mul(g, y))),
                Op::Log(a) => {
                    let d = self.reciprocal(a);
                    contributions.push((a, self.mul(g, d)));
                }
                Op::Square(a) => {
                    let ga = self.mul(g, a);
                    contributions.push((a, self.scale_by(ga, 2.0)));
                }
                Op::Sum(a) => {
                    let len = self.node_len(a);
                    contributions.push((a, self.broadcast(g, len)));
                }
                Op::Broadcast(a) => contributions.push((a, self.sum(g))),
                Op::Reciprocal(a) => {
                    let y2 = self.square(y);
                    let gy = self.mul(g, y2);
                    contributions.push((a, self.neg(gy)));
                }
            }
            for (target, c) in contributions {
                let t = target.index();
                adj[t] = Some(match adj[t] {
                    Some(prev) => self.add(prev, c),
                    None => c,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adj.get(w.index()).copied().flatten() {
                Some(g) => g,
                None => {
                    let (rows, cols) = self.shape(*w);
                    let z = self.filled(rows * cols, 0.0);
                    self.nodes[z.index()].rows = rows;
                    z
                }
            })
            .collect())
    }

    /// `a bᵀ` shaped like the matrix `like`.
    fn outer_matrix(&mut self, a: Var, b: Var, like: Var) -> Var {
        let o = self.outer(a, b);
        debug_assert_eq!(self.shape(o), self.shape(like));
        o
    }

    /// Reinterprets a flat node as a `rows × cols` matrix. Adjoints of
    /// [`Op::Outer`] are flat sums of matrix-shaped nodes, so the shape is
    /// already right unless the adjoint came from elementwise ops.
    fn as_matrix(&mut self, v: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.node_len(v), rows * cols);
        if self.shape(v) == (rows, cols) {
            return v;
        }
        // zero-cost view: add a zero matrix with the right shape
        let z = self.filled(rows * cols, 0.0);
        self.nodes[z.index()].rows = rows;
        let out = self.add(z, v);
        self.nodes[out.index()].rows = rows;
        out
    }
}

fn operands(op: Op) -> [Option<Var>; 2] {
    match op {
        Op::Constant | Op::Input => [None, None],
        Op::Add(a, b)
        | Op::Mul(a, b)
        | Op::Scale(a, b)
        | Op::MatVec(a, b)
        | Op::MatTVec(a, b)
        | Op::Outer(a, b)
        | Op::Dot(a, b) => [Some(a), Some(b)],
        Op::Neg(a)
        | Op::Tanh(a)
        | Op::Softplus(a)
        | Op::Sigmoid(a)
        | Op::Relu(a)
        | Op::Step(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Square(a)
        | Op::Sum(a)
        | Op::Broadcast(a)
        | Op::Reciprocal(a) => [Some(a), None],
    }
}
