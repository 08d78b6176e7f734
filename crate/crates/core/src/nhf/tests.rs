use std::f64::consts::PI;

use super::objective::{draw_eps, elbo_on_tape};
use super::*;
use crate::diffgraph::Tape;
use crate::linalg::{determinant, jacobian_central};
use crate::models::{accumulate_grads, quadratic_model, GaussianEncoder, SeparableHamiltonianModel};
use crate::phase::PhaseState;
use crate::reports::{kde_grid, total_variation, Grid2d};
use crate::rng::RngStream;

fn st(q: &[f64], p: &[f64]) -> PhaseState {
    PhaseState::new(q.to_vec(), p.to_vec()).unwrap()
}

fn random_stack(d: usize, seed: u64) -> FlowStack {
    FlowStack::random(d, 2, 2, 0.3, &[12, 12], &mut RngStream::new(seed)).unwrap()
}

fn ln_normal(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

#[test]
fn identity_stack_density_at_origin() {
    let stack = FlowStack::identity(1, 2, 2, 0.125, &[8]).unwrap();
    let prior = PriorSpec::standard_normal();
    let s = st(&[0.0], &[0.0]);
    assert_eq!(flow_forward(&stack, &s).unwrap(), s);
    assert!((log_density(&stack, &prior, &s).unwrap() + (2.0 * PI).ln()).abs() < 1e-15);
}

#[test]
fn forward_inverse_round_trip() {
    for d in [1, 2] {
        let stack = random_stack(d, d as u64);
        let mut rng = RngStream::new(7);
        for _ in 0..10 {
            let s = crate::energy::random_state(&mut rng, d, 1.5);
            let back = flow_inverse(&stack, &flow_forward(&stack, &s).unwrap()).unwrap();
            assert!(back.max_abs_diff(&s) < 1e-9);
        }
    }
}

#[test]
fn pure_drift_inverse_is_closed_form() {
    // K = 0.75 p², V = 0: every step moves q by dt·1.5·p
    let stack = FlowStack::new(vec![quadratic_model(1, 0.75, 0.0)], 3, 0.2).unwrap();
    let s = st(&[0.4], &[-1.1]);
    let back = flow_inverse(&stack, &s).unwrap();
    assert!((back.q()[0] - (0.4 - 3.0 * 0.2 * 1.5 * -1.1)).abs() < 1e-15);
    assert_eq!(back.p(), s.p());
}

/// `H = a p² + b q²` for `leapfrog_steps` steps as a 2×2 matrix on `(q, p)`.
fn leapfrog_matrix(a: f64, b: f64, dt: f64, steps: usize) -> [[f64; 2]; 2] {
    let mul = |x: [[f64; 2]; 2], y: [[f64; 2]; 2]| {
        let mut r = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
            }
        }
        r
    };
    let kick = [[1.0, 0.0], [-b * dt, 1.0]];
    let drift = [[1.0, 2.0 * a * dt], [0.0, 1.0]];
    let one = mul(kick, mul(drift, kick));
    let mut m = [[1.0, 0.0], [0.0, 1.0]];
    for _ in 0..steps {
        m = mul(one, m);
    }
    m
}

#[test]
fn quadratic_stack_matches_matrix_power() {
    let (dt, l) = (0.3, 2);
    let stack = FlowStack::new(vec![quadratic_model(1, 0.5, 1.0), quadratic_model(1, 1.5, 0.25)], l, dt).unwrap();
    let m1 = leapfrog_matrix(0.5, 1.0, dt, l);
    let m2 = leapfrog_matrix(1.5, 0.25, dt, l);
    for (q, p) in [(1.0, 0.0), (0.3, -0.8), (-2.0, 1.0)] {
        let x = [m1[0][0] * q + m1[0][1] * p, m1[1][0] * q + m1[1][1] * p];
        let y = [m2[0][0] * x[0] + m2[0][1] * x[1], m2[1][0] * x[0] + m2[1][1] * x[1]];
        let out = flow_forward(&stack, &st(&[q], &[p])).unwrap();
        assert!((out.q()[0] - y[0]).abs() < 1e-12 && (out.p()[0] - y[1]).abs() < 1e-12);
    }
}

#[test]
fn no_jacobian_term_is_needed() {
    let prior = PriorSpec::standard_normal();
    for d in [1, 2] {
        let stack = random_stack(d, 20 + d as u64);
        let mut rng = RngStream::new(3);
        for _ in 0..5 {
            let s_t = crate::energy::random_state(&mut rng, d, 1.0);
            let inv = |x: &[f64]| -> crate::error::Result<Vec<f64>> {
                Ok(flow_inverse(&stack, &crate::phase::state_split(x)?)?.concat())
            };
            let (jac, n) = jacobian_central(inv, &s_t.concat(), 1e-6).unwrap();
            let logdet = determinant(&jac, n).abs().ln();
            assert!(logdet.abs() < 1e-5, "{logdet}");
            let s0 = flow_inverse(&stack, &s_t).unwrap();
            let with_jacobian = prior.logpdf(&s0.concat()) + logdet;
            assert!((log_density(&stack, &prior, &s_t).unwrap() - with_jacobian).abs() < 1e-5);
        }
    }
}

#[test]
fn density_invariant_under_flow_then_inverse() {
    let stack = random_stack(1, 31);
    let prior = PriorSpec::default();
    let s = st(&[0.2], &[-0.4]);
    let moved = flow_inverse(&stack, &flow_forward(&stack, &s).unwrap()).unwrap();
    let a = log_density(&stack, &prior, &s).unwrap();
    let b = log_density(&stack, &prior, &moved).unwrap();
    assert!((a - b).abs() < 1e-9);
}

#[test]
fn random_flow_density_integrates_to_one() {
    let stack = random_stack(1, 41);
    for prior in [PriorSpec::standard_normal(), PriorSpec::default()] {
        let g = Grid2d::square(7.0, 200);
        let vals: Vec<f64> = g.points().map(|[q, p]| log_density(&stack, &prior, &st(&[q], &[p])).unwrap().exp()).collect();
        let mass = g.integrate(&vals);
        assert!((mass - 1.0).abs() < 0.02, "{mass}");
    }
}

#[test]
fn soft_uniform_prior_shape() {
    let prior = PriorSpec::soft_uniform(2.0, 3.0).unwrap();
    let at0 = prior.logpdf(&[0.0]);
    for x in [0.1, 0.5, 1.0, 2.0, 5.0] {
        assert!(prior.logpdf(&[x]) < at0);
        assert_eq!(prior.logpdf(&[x]), prior.logpdf(&[-x]));
        assert_eq!(soft_uniform_logpdf(&prior, &[x, -x]), 2.0 * prior.logpdf(&[x]));
    }
    assert!(PriorSpec::soft_uniform(0.0, 1.0).is_err());
    assert!(PriorSpec::soft_uniform(1.0, -1.0).is_err());
}

#[test]
fn soft_uniform_normalizer_matches_trapezoid() {
    for (sigma, beta) in [(1.0, 4.0), (6.0, 4.0), (2.0, 0.5)] {
        let lo = -0.5 * sigma - 50.0 / beta;
        let hi = -lo;
        let n = 100_000;
        let h = (hi - lo) / (n - 1) as f64;
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let f = |x: f64| sig(beta * (x + 0.5 * sigma)) * sig(-beta * (x - 0.5 * sigma));
        let trap: f64 = (0..n).map(|i| f(lo + i as f64 * h) * if i == 0 || i == n - 1 { 0.5 } else { 1.0 }).sum::<f64>() * h;
        let stored = PriorSpec::soft_uniform(sigma, beta).unwrap().log_normalizer().exp();
        assert!((stored - trap).abs() / trap < 1e-6, "{stored} {trap}");
    }
}

#[test]
fn prior_on_tape_matches_plain() {
    for prior in [PriorSpec::default(), PriorSpec::standard_normal()] {
        let x = [0.3, -1.7, 2.5];
        let mut t = Tape::new();
        let v = t.input(&x);
        let l = prior.logpdf_on_tape(&mut t, v);
        assert!((t.scalar_value(l) - prior.logpdf(&x)).abs() < 1e-13);
    }
}

#[test]
fn prior_samples_follow_the_density() {
    let prior = PriorSpec::soft_uniform(2.0, 4.0).unwrap();
    let mut rng = RngStream::new(4);
    let xs = prior.sample(&mut rng, 40_000);
    // fraction in [−0.5, 0.5] against the quadrature of the density
    let frac = xs.iter().filter(|x| x.abs() <= 0.5).count() as f64 / xs.len() as f64;
    let n = 2000;
    let expected: f64 = (0..n).map(|i| prior.logpdf(&[-0.5 + (i as f64 + 0.5) / n as f64]).exp()).sum::<f64>() / n as f64;
    assert!((frac - expected).abs() < 0.01, "{frac} {expected}");
}

#[test]
fn serde_round_trip_of_prior() {
    let p = PriorSpec::soft_uniform(3.0, 2.0).unwrap();
    let text = serde_json::to_string(&p).unwrap();
    assert!(!text.contains("log_norm"));
    let back: PriorSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(back, p);
    assert!(serde_json::from_str::<PriorSpec>(r#"{"kind":"soft_uniform","sigma":-1.0,"beta":1.0}"#).is_err());
}

#[test]
fn elbo_with_the_true_posterior_is_exact() {
    let stack = FlowStack::identity(1, 1, 2, 0.125, &[4]).unwrap();
    let prior = PriorSpec::standard_normal();
    let enc = GaussianEncoder::constant(1, &[4], 0.0, 1.0);
    let mut rng = RngStream::new(1);
    for q in [0.0, 0.7, -1.9] {
        let e = elbo(&stack, &prior, &enc, &[q], &mut rng, 1).unwrap();
        assert!((e - ln_normal(q)).abs() < 1e-6, "{e}");
    }
}

#[test]
fn elbo_gap_equals_kl_of_shifted_encoder() {
    let stack = FlowStack::identity(1, 1, 2, 0.125, &[4]).unwrap();
    let prior = PriorSpec::standard_normal();
    let enc = GaussianEncoder::constant(1, &[4], 1.0, 1.0);
    let q = 0.4;
    let samples = elbo_samples(&stack, &prior, &enc, &[q], &mut RngStream::new(2), 10_000).unwrap();
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let gap = ln_normal(q) - mean;
    assert!((gap - 0.5).abs() < 0.05, "{gap}");
}

#[test]
fn elbo_is_deterministic_for_a_fixed_stream() {
    let stack = random_stack(1, 5);
    let enc = GaussianEncoder::new(1, &[8], &mut RngStream::new(6));
    let prior = PriorSpec::default();
    let a = elbo(&stack, &prior, &enc, &[0.3], &mut RngStream::new(9), 1).unwrap();
    let b = elbo(&stack, &prior, &enc, &[0.3], &mut RngStream::new(9), 1).unwrap();
    assert_eq!(a, b);
    assert!(elbo(&stack, &prior, &enc, &[0.3], &mut RngStream::new(9), 0).is_err());
}

#[test]
fn elbo_lower_bounds_the_marginal() {
    let prior = PriorSpec::standard_normal();
    let stack = FlowStack::new(vec![quadratic_model(1, 0.5, 0.8), quadratic_model(1, 1.2, 0.3)], 2, 0.4).unwrap();
    let enc = GaussianEncoder::new(1, &[8], &mut RngStream::new(12));
    let mut rng = RngStream::new(13);
    for q in [-1.0, 0.0, 0.8] {
        let exact = marginal_log_density_1d(&stack, &prior, q, 12.0, 2001).unwrap();
        let xs = elbo_samples(&stack, &prior, &enc, &[q], &mut rng, 2000).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let se = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!(mean <= exact + 3.0 * se, "{mean} {exact} {se}");
    }
}

fn neg_elbo_direction_check<F: DensityFlow>(flow: &F, enc: &GaussianEncoder, prior: &PriorSpec, q: &[f64]) -> f64 {
    let eps = draw_eps(&mut RngStream::new(77), 2, q.len());
    let value = |f: &F, e: &GaussianEncoder, want_grad: bool| {
        let mut t = Tape::new();
        let fb = f.bind(&mut t);
        let eb = e.bind(&mut t);
        let b = elbo_on_tape::<F>(&fb, &eb, prior, &mut t, q, &eps);
        let l = t.neg(b);
        let mut grad = vec![];
        if want_grad {
            let g = t.backward(l).unwrap();
            let mut vars = F::param_vars(&fb);
            vars.extend(eb.param_vars());
            grad = vec![0.0; f.num_params() + e.num_params()];
            accumulate_grads(&g, &vars, &mut grad);
        }
        (t.scalar_value(l), grad)
    };
    let (_, grad) = value(flow, enc, true);
    let mut base = flow.params();
    enc.write_params(&mut base);
    let nf = flow.num_params();
    let at = |theta: &[f64]| {
        let mut f = flow.clone();
        f.set_params(&theta[..nf]).unwrap();
        let mut e = enc.clone();
        e.read_params(&theta[nf..]).unwrap();
        value(&f, &e, false).0
    };
    let mut rng = RngStream::new(5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let u: Vec<f64> = (0..base.len()).map(|_| rng.standard_normal()).collect();
        let h = 1e-6;
        let plus: Vec<f64> = base.iter().zip(&u).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = base.iter().zip(&u).map(|(a, b)| a - h * b).collect();
        let fd = (at(&plus) - at(&minus)) / (2.0 * h);
        let an: f64 = grad.iter().zip(&u).map(|(a, b)| a * b).sum();
        worst = worst.max((fd - an).abs() / an.abs().max(fd.abs()).max(1e-8));
    }
    worst
}

#[test]
fn negative_elbo_gradients_match_finite_differences() {
    let enc = GaussianEncoder::new(2, &[8], &mut RngStream::new(1));
    let prior = PriorSpec::soft_uniform(1.0, 4.0).unwrap();
    let stack = FlowStack::random(2, 2, 2, 0.2, &[8, 8], &mut RngStream::new(2)).unwrap();
    let e1 = neg_elbo_direction_check(&stack, &enc, &prior, &[0.3, -0.5]);
    assert!(e1 < 1e-4, "nhf {e1}");
    let rnvp = RnvpDensity::new(2, 2, &[8], &mut RngStream::new(3));
    let e2 = neg_elbo_direction_check(&rnvp, &enc, &PriorSpec::standard_normal(), &[0.3, -0.5]);
    assert!(e2 < 1e-4, "rnvp {e2}");
}

#[test]
fn rnvp_density_integrates_to_one() {
    let flow = RnvpDensity::new(1, 2, &[8], &mut RngStream::new(8));
    let prior = PriorSpec::standard_normal();
    let g = Grid2d::square(20.0, 400);
    let vals: Vec<f64> = g.points().map(|[q, p]| flow.log_density(&prior, &st(&[q], &[p])).unwrap().exp()).collect();
    let mass = g.integrate(&vals);
    assert!((mass - 1.0).abs() < 0.02, "{mass}");
}

#[test]
fn samples_agree_with_density() {
    let stack = random_stack(1, 51);
    let prior = PriorSpec::standard_normal();
    let mut rng = RngStream::new(52);
    let pts: Vec<[f64; 2]> = (0..1000)
        .map(|_| {
            let s = stack.sample(&prior, &mut rng).unwrap();
            [s.q()[0], s.p()[0]]
        })
        .collect();
    let g = Grid2d::square(5.0, 100);
    let kde = kde_grid(&pts, 0.3, &g).unwrap();
    let dens: Vec<f64> = g.points().map(|[q, p]| log_density(&stack, &prior, &st(&[q], &[p])).unwrap().exp()).collect();
    let tv = total_variation(&kde, &dens, &g).unwrap();
    assert!(tv < 0.15, "{tv}");
}

#[test]
fn checkpoint_round_trip() {
    let stack = random_stack(2, 61);
    let mut buf = Vec::new();
    stack.to_checkpoint().write_to(&mut buf).unwrap();
    let back = FlowStack::from_checkpoint(&crate::models::Checkpoint::read_from(&mut buf.as_slice()).unwrap()).unwrap();
    assert_eq!(back, stack);
}

#[test]
fn set_params_round_trip_includes_dt() {
    let mut stack = random_stack(1, 62);
    let mut p = stack.params();
    *p.last_mut().unwrap() = 0.5f64.ln();
    stack.set_params(&p).unwrap();
    assert!((stack.dt() - 0.5).abs() < 1e-15);
    assert!(stack.set_params(&p[1..]).is_err());
}

#[test]
fn mixture_targets() {
    let m = DensityKind::Mixture2.target();
    // analytic NLL is the entropy; quadrature as oracle
    let n = 20_000;
    let h = 12.0 / n as f64;
    let entropy: f64 = (0..n)
        .map(|i| {
            let x = -6.0 + (i as f64 + 0.5) * h;
            let l = m.log_density(&[x]).unwrap();
            -l * l.exp() * h
        })
        .sum();
    let xs = m.sample(&mut RngStream::new(3), 50_000);
    assert!((m.mean_nll(&xs).unwrap() - entropy).abs() < 0.02);
    assert!((entropy - 0.9082).abs() < 1e-3, "{entropy}");
    let four = DensityKind::Mixture4.target();
    assert_eq!(four.dim(), 2);
    assert!("mixture9".parse::<DensityKind>().is_err());
    assert_eq!("point-mass".parse::<DensityKind>().unwrap(), DensityKind::PointMass);
    assert!(DensityKind::PointMass.target().log_density(&[0.0]).is_err());
}

#[test]
fn log_sum_exp_is_stable() {
    assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
}

fn small_settings(steps: usize) -> FlowTrainSettings {
    FlowTrainSettings {
        steps,
        batch_size: 16,
        lr: 1e-2,
        encoder_hidden: vec![8],
        eval_every: steps,
        ..FlowTrainSettings::default()
    }
}

#[test]
fn training_curve_is_reproducible() {
    let data = DensityKind::Mixture2.target().sample(&mut RngStream::new(1), 64);
    let cfg = NhfConfig {
        hidden: vec![8],
        train: small_settings(5),
        ..NhfConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train_nhf(&data, &cfg, None).unwrap())
    };
    let a = run(1);
    let b = run(1);
    let c = run(3);
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.curve, c.curve);
    assert_eq!(a.flow, c.flow);
    assert_eq!(a.curve.len(), 5);
    assert!(train_nhf(&[], &cfg, None).is_err());
}

#[test]
fn point_mass_training_puts_the_mode_at_the_origin() {
    let data = vec![vec![0.0]; 256];
    let cfg = NhfConfig {
        hidden: vec![16, 16],
        prior: PriorSpec::standard_normal(),
        train: small_settings(300),
        ..NhfConfig::default()
    };
    let mut seen = 0;
    let mut obs = |_: usize, _: &FlowStack, _: &GaussianEncoder| {
        seen += 1;
        Ok(())
    };
    let out = train_nhf(&data, &cfg, Some(&mut obs)).unwrap();
    assert_eq!(seen, 1);
    let prior = cfg.prior;
    let (mode, _) = (0..161)
        .map(|i| {
            let q = -4.0 + i as f64 * 0.05;
            (q, marginal_log_density_1d(&out.flow, &prior, q, 8.0, 401).unwrap())
        })
        .fold((0.0, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best });
    assert!(mode.abs() < 0.2, "{mode}");
    let first = out.curve[..20].iter().map(|c| c.negative_elbo).sum::<f64>();
    let last = out.curve[out.curve.len() - 20..].iter().map(|c| c.negative_elbo).sum::<f64>();
    assert!(last < first);
}

#[test]
fn displacement_field_of_quadratic_hamiltonian() {
    let stack = FlowStack::new(vec![quadratic_model(1, 0.5, 0.5)], 2, 0.1).unwrap();
    let m = leapfrog_matrix(0.5, 0.5, 0.1, 1);
    let d = leapfrog_displacements(&stack, &[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    assert!((d[0][0] - (m[0][0] - 1.0)).abs() < 1e-14 && (d[0][1] - m[1][0]).abs() < 1e-14);
    assert!((d[1][0] - m[0][1]).abs() < 1e-14 && (d[1][1] - (m[1][1] - 1.0)).abs() < 1e-14);
    let wide = FlowStack::identity(2, 1, 1, 0.1, &[4]).unwrap();
    assert!(leapfrog_displacements(&wide, &[[0.0, 0.0]]).is_err());
}

#[test]
fn constructor_rejects_bad_stacks() {
    assert!(FlowStack::new(vec![], 2, 0.1).is_err());
    assert!(FlowStack::new(vec![SeparableHamiltonianModel::zeros(1, &[2])], 0, 0.1).is_err());
    assert!(FlowStack::new(vec![SeparableHamiltonianModel::zeros(1, &[2])], 1, -0.1).is_err());
    assert!(FlowStack::new(vec![SeparableHamiltonianModel::zeros(1, &[2]), SeparableHamiltonianModel::zeros(2, &[2])], 1, 0.1).is_err());
}
