use super::*;
use proptest::prelude::*;

/// Builds a scalar function of one vector input on a fresh tape.
type Builder = fn(&mut Tape, Var) -> Var;

fn eval(f: Builder, x: &[f64]) -> f64 {
    let mut t = Tape::new();
    let v = t.input(x);
    let y = f(&mut t, v);
    t.scalar_value(y)
}

fn fd_grad(f: Builder, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (eval(f, &a) - eval(f, &b)) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn symbolic_grad(f: Builder, x: &[f64]) -> Vec<f64> {
    let mut t = Tape::new();
    let v = t.input(x);
    let y = f(&mut t, v);
    let g = t.grad_as_graph(y, &[v]).unwrap()[0];
    t.value(g).to_vec()
}

const MAT: [f64; 6] = [0.5, -1.0, 0.25, 2.0, 0.3, -0.7];

fn cases() -> Vec<(&'static str, Builder)> {
    vec![
        ("square-sum", |t, x| {
            let s = t.square(x);
            t.sum(s)
        }),
        ("softplus-matvec", |t, x| {
            let w = t.matrix_input(&MAT, 2, 3);
            let h = t.matvec(w, x);
            let a = t.softplus(h);
            t.sum(a)
        }),
        ("tanh-mattvec", |t, x| {
            let w = t.matrix_input(&MAT, 3, 2);
            let h = t.matvec(w, x);
            let a = t.tanh(h);
            let back = t.mattvec(w, a);
            t.dot(back, x)
        }),
        ("sigmoid-exp-log", |t, x| {
            let s = t.sigmoid(x);
            let e = t.exp(s);
            let l = t.log(e);
            let r = t.reciprocal(e);
            let m = t.mul(l, r);
            t.sum(m)
        }),
        ("scale-broadcast-outer", |t, x| {
            let n = t.node_len(x);
            let s = t.sum(x);
            let b = t.broadcast(s, n);
            let sc = t.scale(x, s);
            let o = t.outer(b, sc);
            let o2 = t.square(o);
            let tot = t.sum(o2);
            t.scale_by(tot, 0.01)
        }),
        ("neg-sub", |t, x| {
            let c = t.constant(&[1.0, 2.0, 3.0]);
            let d = t.sub(x, c);
            let n = t.neg(d);
            let q = t.mul(n, d);
            t.sum(q)
        }),
    ]
}

#[test]
fn square_and_softplus_examples() {
    let mut t = Tape::new();
    let x = t.input(&[3.0]);
    let y = t.square(x);
    assert_eq!(t.scalar_value(y), 9.0);
    assert_eq!(t.backward(y).unwrap().scalar(x), 6.0);
    let dy = t.grad_as_graph(y, &[x]).unwrap()[0];
    assert_eq!(t.backward(dy).unwrap().scalar(x), 2.0);

    let mut t = Tape::new();
    let x = t.input(&[0.0]);
    let y = t.softplus(x);
    assert!((t.scalar_value(y) - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(t.backward(y).unwrap().scalar(x), 0.5);
    let dy = t.grad_as_graph(y, &[x]).unwrap()[0];
    assert_eq!(t.scalar_value(dy), 0.5);
    assert_eq!(t.backward(dy).unwrap().scalar(x), 0.25);
}

#[test]
fn two_layer_mlp_matches_hand_arithmetic() {
    // W1 = [[1, 2], [-1, 0.5]], b1 = [0.1, -0.2], W2 = [[0.3, -0.4]], b2 = [0.05], x = [0.5, -1]
    // h = W1 x + b1 = [0.5 - 2 + 0.1, -0.5 - 0.5 - 0.2] = [-1.4, -1.2]
    // out = W2 tanh(h) + b2
    let mut t = Tape::new();
    let w1 = t.matrix_input(&[1.0, 2.0, -1.0, 0.5], 2, 2);
    let b1 = t.input(&[0.1, -0.2]);
    let w2 = t.matrix_input(&[0.3, -0.4], 1, 2);
    let b2 = t.input(&[0.05]);
    let x = t.input(&[0.5, -1.0]);
    let h = t.matvec(w1, x);
    let h = t.add(h, b1);
    assert_eq!(t.value(h), &[-1.4, -1.2]);
    let a = t.tanh(h);
    let o = t.matvec(w2, a);
    let o = t.add(o, b2);
    let expected = 0.3 * (-1.4f64).tanh() - 0.4 * (-1.2f64).tanh() + 0.05;
    assert!((t.scalar_value(o) - expected).abs() < 1e-15);
}

#[test]
fn backward_matches_finite_differences() {
    let x = [0.3, -0.8, 1.1];
    for (name, f) in cases() {
        let x: Vec<f64> = if name.contains("mattvec") { x[..2].to_vec() } else { x.to_vec() };
        let mut t = Tape::new();
        let v = t.input(&x);
        let y = f(&mut t, v);
        let g = t.backward(y).unwrap();
        let err = rel_err(g.get(v), &fd_grad(f, &x, 1e-5));
        assert!(err < 1e-6, "{name}: {err}");
        let sym = symbolic_grad(f, &x);
        assert!(rel_err(&sym, g.get(v)) < 1e-12, "{name}: symbolic {sym:?} vs {:?}", g.get(v));
    }
}

#[test]
fn second_order_matches_finite_differences_of_gradient() {
    let x = [0.3, -0.8, 1.1];
    for (name, f) in cases() {
        let x: Vec<f64> = if name.contains("mattvec") { x[..2].to_vec() } else { x.to_vec() };
        for i in 0..x.len() {
            // d/dx of the i-th gradient component
            let mut t = Tape::new();
            let v = t.input(&x);
            let y = f(&mut t, v);
            let g = t.grad_as_graph(y, &[v]).unwrap()[0];
            let sel = t.constant(&(0..x.len()).map(|k| (k == i) as u8 as f64).collect::<Vec<_>>());
            let gi = t.dot(g, sel);
            let hess_row = t.backward(gi).unwrap().get(v).to_vec();
            let h = 1e-5;
            let fd: Vec<f64> = (0..x.len())
                .map(|j| {
                    let mut a = x.clone();
                    let mut b = x.clone();
                    a[j] += h;
                    b[j] -= h;
                    (symbolic_grad(f, &a)[i] - symbolic_grad(f, &b)[i]) / (2.0 * h)
                })
                .collect();
            let err = rel_err(&hess_row, &fd);
            assert!(err < 1e-5, "{name} row {i}: {hess_row:?} vs {fd:?}");
        }
    }
}

#[test]
fn quadratic_form_hessian() {
    // f = ½ xᵀ A x with non-symmetric A has Hessian (A + Aᵀ)/2
    let a = [1.0, 2.0, 0.0, -1.0, 3.0, 0.5, 0.25, 0.0, 2.0];
    let x = [0.4, -0.3, 0.9];
    for i in 0..3 {
        let mut t = Tape::new();
        let v = t.input(&x);
        let m = t.matrix_input(&a, 3, 3);
        let ax = t.matvec(m, v);
        let q = t.dot(v, ax);
        let f = t.scale_by(q, 0.5);
        let g = t.grad_as_graph(f, &[v]).unwrap()[0];
        let sel = t.constant(&[(i == 0) as u8 as f64, (i == 1) as u8 as f64, (i == 2) as u8 as f64]);
        let gi = t.dot(g, sel);
        let row = t.backward(gi).unwrap().get(v).to_vec();
        for j in 0..3 {
            let expected = 0.5 * (a[i * 3 + j] + a[j * 3 + i]);
            assert!((row[j] - expected).abs() < 1e-12, "H[{i}][{j}] = {} vs {expected}", row[j]);
        }
    }
}

#[test]
fn gradient_wrt_matrix_through_second_order() {
    // L = |∂/∂x sum(softplus(W x))|² ; check dL/dW against finite differences
    let x = [0.7, -0.4, 0.2];
    let loss = |w: &[f64]| -> (f64, Vec<f64>) {
        let mut t = Tape::new();
        let wm = t.matrix_input(w, 2, 3);
        let xv = t.input(&x);
        let h = t.matvec(wm, xv);
        let a = t.softplus(h);
        let s = t.sum(a);
        let gx = t.grad_as_graph(s, &[xv]).unwrap()[0];
        let l = t.dot(gx, gx);
        let grads = t.backward(l).unwrap();
        (t.scalar_value(l), grads.get(wm).to_vec())
    };
    let (_, analytic) = loss(&MAT);
    for k in 0..MAT.len() {
        let mut a = MAT;
        let mut b = MAT;
        a[k] += 1e-5;
        b[k] -= 1e-5;
        let fd = (loss(&a).0 - loss(&b).0) / 2e-5;
        assert!((fd - analytic[k]).abs() < 1e-7, "k={k}: {fd} vs {}", analytic[k]);
    }
}

#[test]
fn relu_subgradient_at_zero() {
    let mut t = Tape::new();
    let x = t.input(&[0.0, 1.0, -1.0]);
    let r = t.relu(x);
    let s = t.sum(r);
    assert_eq!(t.backward(s).unwrap().get(x), &[0.0, 1.0, 0.0]);
    let g = t.grad_as_graph(s, &[x]).unwrap()[0];
    assert_eq!(t.value(g), &[0.0, 1.0, 0.0]);
}

#[test]
fn placeholders_and_forward() {
    let mut t = Tape::new();
    let x = t.placeholder(2);
    let y = t.square(x);
    let s = t.sum(y);
    assert!(matches!(t.forward(), Err(Error::Graph(_))));
    t.bind(x, &[1.0, 2.0]).unwrap();
    assert!(t.backward(s).is_err(), "backward before forward");
    t.forward().unwrap();
    assert_eq!(t.scalar_value(s), 5.0);
    assert_eq!(t.backward(s).unwrap().get(x), &[2.0, 4.0]);
    assert!(t.bind(x, &[1.0]).is_err());
    assert!(t.bind(s, &[1.0]).is_err());
}

#[test]
fn forward_reports_non_finite() {
    let mut t = Tape::new();
    let x = t.placeholder(1);
    t.log(x);
    t.bind(x, &[-1.0]).unwrap();
    assert!(matches!(t.forward(), Err(Error::NonFinite(_))));
}

#[test]
fn backward_needs_scalar() {
    let mut t = Tape::new();
    let x = t.input(&[1.0, 2.0]);
    assert!(t.backward(x).is_err());
    assert!(t.grad_as_graph(x, &[x]).is_err());
}

#[test]
fn unrelated_inputs_get_zero_gradient() {
    let mut t = Tape::new();
    let x = t.input(&[1.0]);
    let w = t.matrix_input(&[1.0, 2.0, 3.0, 4.0], 2, 2);
    let y = t.square(x);
    let g = t.grad_as_graph(y, &[x, w]).unwrap();
    assert_eq!(t.value(g[1]), &[0.0; 4]);
    assert_eq!(t.shape(g[1]), (2, 2));
    assert_eq!(t.backward(y).unwrap().get(w), &[0.0; 4]);
}

#[test]
fn clear_reuses_tape() {
    let mut t = Tape::new();
    let x = t.input(&[2.0]);
    let _ = t.square(x);
    t.clear();
    assert!(t.is_empty());
    let x = t.input(&[3.0]);
    let y = t.square(x);
    assert_eq!(t.scalar_value(y), 9.0);
}

proptest! {
    #[test]
    fn backward_is_linear(xs in prop::collection::vec(-2.0f64..2.0, 3), a in -4i32..4, b in -4i32..4) {
        let (a, b) = (2f64.powi(a), -(2f64.powi(b)));
        let build = |t: &mut Tape, v: Var| {
            let w = t.matrix_input(&MAT, 2, 3);
            let h = t.matvec(w, v);
            let f = { let s = t.softplus(h); t.sum(s) };
            let g = { let s = t.square(v); let e = t.tanh(s); t.sum(e) };
            (f, g)
        };
        let grad_of = |which: u8| {
            let mut t = Tape::new();
            let v = t.input(&xs);
            let (f, g) = build(&mut t, v);
            let out = match which {
                0 => f,
                1 => g,
                _ => { let af = t.scale_by(f, a); let bg = t.scale_by(g, b); t.add(af, bg) }
            };
            t.backward(out).unwrap().get(v).to_vec()
        };
        let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
        // equal up to summation order of the per-row contributions
        for k in 0..3 {
            let expected = a * gf[k] + b * gg[k];
            prop_assert!((gc[k] - expected).abs() <= 1e-14 * expected.abs().max(1.0), "{} vs {}", gc[k], expected);
        }
    }
}

#[test]
fn directional_gradient_error_flags_wrong_gradients() {
    let theta = [0.5, -1.2, 2.0];
    let f = |t: &[f64]| Ok(t.iter().map(|x| x * x * x).sum::<f64>());
    let good: Vec<f64> = theta.iter().map(|x| 3.0 * x * x).collect();
    let mut rng = crate::rng::RngStream::new(1);
    assert!(directional_gradient_error(&theta, &good, 10, 1e-5, &mut rng, f).unwrap() < 1e-8);
    let bad = [good[0], good[1] * 1.1, good[2]];
    assert!(directional_gradient_error(&theta, &bad, 10, 1e-5, &mut rng, f).unwrap() > 1e-3);
    assert!(directional_gradient_error(&theta, &good[..2], 1, 1e-5, &mut rng, f).is_err());
}
