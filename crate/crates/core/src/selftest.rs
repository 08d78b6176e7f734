//! Fast self-checks of the library's core guarantees, runnable from the
//! command line. Each check reports a measured quantity next to its bound.

use std::path::PathBuf;
use std::time::Instant;

use crate::datagen::{load_dataset, render_frame, write_dataset, DatasetSpec, RenderSpec};
use crate::diffgraph::{directional_gradient_error, Tape};
use crate::energy::{gradient_check, random_state, EnergyFunction};
use crate::error::Result;
use crate::integrators::{jacobian_determinant, rollout, IntegratorKind, IntegratorSpec};
use crate::learner::{hnn_loss, rollout_loss};
use crate::models::{accumulate_grads, exact_mass_spring_model, AdamState, Checkpoint, SeparableHamiltonianModel};
use crate::nhf::{
    elbo_samples, negative_elbo_with_gradient, DensityFlow, FlowStack, PriorSpec, RnvpDensity,
};
use crate::models::GaussianEncoder;
use crate::phase::PhaseState;
use crate::reports::{hamiltonian_variance, kde_grid, ks_critical_1pct, ks_statistic_uniform, per_step_mse, Grid2d};
use crate::rng::RngStream;
use crate::systems::{MassSpringParams, System, SystemParams, DATASET_SOFTENING};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn run(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn min_separation(s: &PhaseState, bodies: usize) -> f64 {
    let q = s.q();
    let mut best = f64::INFINITY;
    for i in 0..bodies {
        for j in i + 1..bodies {
            let d = ((q[2 * i] - q[2 * j]).powi(2) + (q[2 * i + 1] - q[2 * j + 1]).powi(2)).sqrt();
            best = best.min(d);
        }
    }
    best
}

/// Unit Jacobian determinant of one leapfrog step for every analytic system
/// and a random learned model, at 50 random states each.
pub fn symplecticity() -> CheckResult {
    run("symplecticity", || {
        let mut rng = RngStream::new(101);
        let mut worst: f64 = 0.0;
        let mut check = |h: &dyn EnergyFunction, bodies: usize, rng: &mut RngStream| -> Result<()> {
            let mut done = 0;
            while done < 50 {
                let s = random_state(rng, h.dim(), 2.0);
                if bodies > 1 && min_separation(&s, bodies) < 0.3 {
                    continue;
                }
                let det = jacobian_determinant(h, &s, IntegratorKind::Leapfrog, 0.125)?;
                worst = worst.max((det - 1.0).abs());
                done += 1;
            }
            Ok(())
        };
        for system in System::ALL {
            let h = SystemParams::defaults(system, DATASET_SOFTENING).hamiltonian()?;
            check(h.as_ref(), system.n_bodies(), &mut rng)?;
        }
        let model = SeparableHamiltonianModel::new(1, &[32, 32], &mut RngStream::new(102));
        check(&model, 1, &mut rng)?;
        Ok((worst < 1e-6, format!("max |det - 1| = {worst:.2e} (bound 1e-6)")))
    })
}

/// 100 leapfrog steps forward then back recover the start; Euler does not.
pub fn reversibility() -> CheckResult {
    run("reversibility", || {
        let mut lf: f64 = 0.0;
        let mut eu = f64::INFINITY;
        for system in [System::MassSpring, System::Pendulum] {
            let h = SystemParams::defaults(system, 0.0).hamiltonian()?;
            let s0 = PhaseState::new(vec![0.8], vec![-0.4])?;
            for (kind, out) in [(IntegratorKind::Leapfrog, &mut lf), (IntegratorKind::Euler, &mut eu)] {
                let fwd = rollout(h.as_ref(), &s0, &IntegratorSpec::new(kind, 0.125, 100))?;
                let end = fwd.states().last().expect("non-empty");
                let back = rollout(h.as_ref(), end, &IntegratorSpec::new(kind, -0.125, 100))?;
                let err = back.states().last().expect("non-empty").max_abs_diff(&s0);
                *out = if kind == IntegratorKind::Leapfrog { out.max(err) } else { out.min(err) };
            }
        }
        Ok((
            lf < 1e-9 && eu > 1e-4,
            format!("leapfrog {lf:.2e} (< 1e-9), euler {eu:.2e} (> 1e-4)"),
        ))
    })
}

fn ln_std_normal(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Identity stack with a standard normal prior: the true posterior over `p`
/// is N(0, 1), so its ELBO is exact, and an encoder shifted by one unit pays
/// exactly KL = 1/2.
pub fn elbo_bound() -> CheckResult {
    run("elbo bound", || {
        let stack = FlowStack::identity(1, 1, 2, 0.125, &[4])?;
        let prior = PriorSpec::standard_normal();
        let q = 0.4;
        let exact = ln_std_normal(q);
        let true_enc = GaussianEncoder::constant(1, &[4], 0.0, 1.0);
        let xs = elbo_samples(&stack, &prior, &true_enc, &[q], &mut RngStream::new(201), 10_000)?;
        let (m1, se1) = mean_and_se(&xs);
        let shifted = GaussianEncoder::constant(1, &[4], 1.0, 1.0);
        let ys = elbo_samples(&stack, &prior, &shifted, &[q], &mut RngStream::new(202), 10_000)?;
        let (m2, _) = mean_and_se(&ys);
        let gap = exact - m2;
        let ok = (m1 - exact).abs() <= 3.0 * se1 + 1e-9 && (gap - 0.5).abs() < 0.05;
        Ok((ok, format!("|elbo - exact| = {:.1e} (3 se = {:.1e}), shifted gap {gap:.4} (0.5 +- 0.05)", (m1 - exact).abs(), 3.0 * se1)))
    })
}

fn model_loss_check(
    model: &SeparableHamiltonianModel,
    rng: &mut RngStream,
    loss: impl Fn(&mut Tape, &crate::models::BoundHamiltonian) -> Result<crate::diffgraph::Var>,
) -> Result<f64> {
    let theta = model.params();
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let l = loss(&mut tape, &b)?;
    let g = tape.backward(l)?;
    let mut grad = vec![0.0; theta.len()];
    accumulate_grads(&g, &b.param_vars(), &mut grad);
    directional_gradient_error(&theta, &grad, 20, 1e-5, rng, |t| {
        let mut m = model.clone();
        m.set_params(t)?;
        let mut tape = Tape::new();
        let b = m.bind(&mut tape);
        let l = loss(&mut tape, &b)?;
        Ok(tape.scalar_value(l))
    })
}

fn elbo_loss_check<F: DensityFlow>(
    flow: &F,
    encoder: &GaussianEncoder,
    prior: &PriorSpec,
    q: &[f64],
    rng: &mut RngStream,
) -> Result<f64> {
    let eps: Vec<Vec<f64>> = (0..2).map(|_| (0..q.len()).map(|_| rng.standard_normal()).collect()).collect();
    let (_, grad) = negative_elbo_with_gradient(flow, encoder, prior, q, &eps)?;
    let mut theta = flow.params();
    encoder.write_params(&mut theta);
    let nf = flow.num_params();
    directional_gradient_error(&theta, &grad, 20, 1e-6, rng, |t| {
        let mut f = flow.clone();
        f.set_params(&t[..nf])?;
        let mut e = encoder.clone();
        e.read_params(&t[nf..])?;
        Ok(negative_elbo_with_gradient(&f, &e, prior, q, &eps)?.0)
    })
}

/// Tape gradients of every training loss against central differences along
/// 20 random parameter directions.
pub fn gradient_integrity() -> CheckResult {
    run("gradient integrity", || {
        let mut rng = RngStream::new(301);
        let model = SeparableHamiltonianModel::new(2, &[16, 16], &mut RngStream::new(302));
        let s = random_state(&mut rng, 2, 1.0);
        let hnn = model_loss_check(&model, &mut rng, |tape, b| hnn_loss(b, tape, &s, &[0.3, -1.0], &[0.5, 0.2]))?;
        let h = SystemParams::defaults(System::Pendulum, 0.0).hamiltonian()?;
        let traj = rollout(h.as_ref(), &PhaseState::new(vec![0.9], vec![0.1])?, &IntegratorSpec::new(IntegratorKind::Leapfrog, 0.125, 6))?;
        let m1 = SeparableHamiltonianModel::new(1, &[16, 16], &mut RngStream::new(303));
        let roll = model_loss_check(&m1, &mut rng, |tape, b| rollout_loss(b, tape, &traj))?;
        let enc = GaussianEncoder::new(2, &[8], &mut RngStream::new(304));
        let stack = FlowStack::random(2, 2, 2, 0.2, &[8, 8], &mut RngStream::new(305))?;
        let nhf = elbo_loss_check(&stack, &enc, &PriorSpec::default(), &[0.3, -0.5], &mut rng)?;
        let rnvp = RnvpDensity::new(2, 2, &[8], &mut RngStream::new(306));
        let rn = elbo_loss_check(&rnvp, &enc, &PriorSpec::standard_normal(), &[0.3, -0.5], &mut rng)?;
        let worst = hnn.max(roll).max(nhf).max(rn);
        Ok((
            worst < 1e-4,
            format!("hnn {hnn:.1e}, rollout {roll:.1e}, nhf elbo {nhf:.1e}, rnvp elbo {rn:.1e} (bound 1e-4)"),
        ))
    })
}

struct ScratchDir(PathBuf);

impl ScratchDir {
    fn new(tag: &str) -> Self {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        ScratchDir(std::env::temp_dir().join(format!("hamflow-{tag}-{}-{nanos}", std::process::id())))
    }
}

impl Drop for ScratchDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

/// Statistics of a generated mass-spring dataset: uniform initial radii,
/// energy conservation of the clean trajectories, noise level and
/// byte-identical regeneration.
pub fn dataset_fidelity(n_train: usize, n_test: usize) -> CheckResult {
    run("dataset fidelity", || {
        let spec = DatasetSpec {
            n_train,
            n_test,
            render: false,
            seed: 401,
            ..DatasetSpec::for_system(System::MassSpring)
        };
        let a = ScratchDir::new("a");
        let b = ScratchDir::new("b");
        write_dataset(&spec, &a.0)?;
        write_dataset(&spec, &b.0)?;
        let mut identical = true;
        for split in ["train", "test"] {
            for f in ["states_clean.f64", "states_noisy.f64"] {
                identical &= std::fs::read(a.0.join(split).join(f))? == std::fs::read(b.0.join(split).join(f))?;
            }
        }
        let ds = load_dataset(&a.0)?;
        let h = spec.resolved_params().hamiltonian()?;
        let (lo, hi) = spec.resolved_radius_range();
        let mut radii = Vec::new();
        let mut drift: f64 = 0.0;
        let mut diffs = Vec::new();
        for split in [&ds.train, &ds.test] {
            for (clean, noisy) in split.clean.iter().zip(&split.noisy) {
                let s0 = &clean.states()[0];
                radii.push(s0.concat().iter().map(|x| x * x).sum::<f64>().sqrt());
                let e0 = h.energy(s0)?;
                for s in clean.states() {
                    drift = drift.max((h.energy(s)? - e0).abs() / e0.abs());
                }
                for (x, y) in noisy.states().iter().zip(clean.states()) {
                    diffs.extend(x.concat().iter().zip(y.concat()).map(|(u, v)| u - v));
                }
            }
        }
        let ks = ks_statistic_uniform(&radii, lo, hi);
        let crit = ks_critical_1pct(radii.len());
        let (m, _) = mean_and_se(&diffs);
        let sd = (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        let target = spec.resolved_noise_std();
        let rel = (sd - target).abs() / target;
        let ok = ks < crit && drift < 1e-8 && rel < 0.02 && identical;
        Ok((
            ok,
            format!(
                "ks {ks:.4} (< {crit:.4}), drift {drift:.1e} (< 1e-8), noise std {sd:.4} ({:.2}% off), identical {identical}",
                100.0 * rel
            ),
        ))
    })
}

/// Quick per-module invariants.
pub fn invariant_suite() -> Vec<CheckResult> {
    vec![
        run("rng: counter streams replay", || {
            // the counter is in 32-bit words, two per u64 draw
            let mut a = RngStream::at(5, 34);
            let mut b = RngStream::new(5);
            for _ in 0..17 {
                b.next_u64();
            }
            let same = (0..100).all(|_| a.next_u64() == b.next_u64());
            let forked = RngStream::new(5).fork(1).next_u64() != RngStream::new(5).fork(2).next_u64();
            Ok((same && forked, format!("replay {same}, forks differ {forked}")))
        }),
        run("diffgraph: second derivative", || {
            let mut tape = Tape::new();
            let x = tape.input(&[1.5]);
            let x2 = tape.square(x);
            let y = tape.mul(x2, x);
            let dy = tape.grad_as_graph(y, &[x])?[0];
            let d2 = tape.backward(dy)?.get(x)[0];
            let err = (tape.scalar_value(dy) - 6.75).abs() + (d2 - 9.0).abs();
            Ok((err < 1e-12, format!("error {err:.1e}")))
        }),
        run("systems: analytic gradients", || {
            let mut rng = RngStream::new(501);
            let mut worst: f64 = 0.0;
            for system in System::ALL {
                let h = SystemParams::defaults(system, 0.1).hamiltonian()?;
                for _ in 0..5 {
                    worst = worst.max(gradient_check(h.as_ref(), &random_state(&mut rng, system.dim(), 1.5), 1e-6)?);
                }
            }
            Ok((worst < 1e-5, format!("max relative error {worst:.1e}")))
        }),
        run("integrators: euler volume growth", || {
            let h = SystemParams::defaults(System::MassSpring, 0.0).hamiltonian()?;
            let s = PhaseState::new(vec![0.3], vec![0.2])?;
            let det = jacobian_determinant(h.as_ref(), &s, IntegratorKind::Euler, 0.1)?;
            Ok(((det - 1.04).abs() < 1e-6, format!("det {det:.8} (1 + dt^2 k/m = 1.04)")))
        }),
        run("models: checkpoint round trip", || {
            let m = SeparableHamiltonianModel::new(2, &[8, 8], &mut RngStream::new(502));
            let mut buf = Vec::new();
            m.to_checkpoint().write_to(&mut buf)?;
            let back = SeparableHamiltonianModel::from_checkpoint(&Checkpoint::read_from(buf.as_slice())?)?;
            let same = back.params() == m.params();
            Ok((same, format!("{} bytes, bitwise equal {same}", buf.len())))
        }),
        run("models: adam minimizes a quadratic", || {
            let mut x = vec![3.0, -2.0];
            let mut adam = AdamState::new(2, 0.1);
            for _ in 0..500 {
                let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
                adam.step(&mut x, &g)?;
            }
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok((norm < 1e-2, format!("|x| = {norm:.1e}")))
        }),
        run("nhf: flow round trip and mass", || {
            let stack = FlowStack::random(1, 2, 2, 0.2, &[8], &mut RngStream::new(503))?;
            let s = PhaseState::new(vec![0.4], vec![-0.3])?;
            let rt = stack.inverse(&stack.forward(&s)?)?.max_abs_diff(&s);
            let prior = PriorSpec::default();
            let grid = Grid2d::square(6.0, 160);
            let values: Vec<f64> = grid
                .points()
                .map(|[q, p]| {
                    let st = PhaseState::from_parts_unchecked(vec![q], vec![p]);
                    stack.log_density(&prior, &st).map(f64::exp)
                })
                .collect::<Result<_>>()?;
            let mass = grid.integrate(&values);
            Ok((rt < 1e-12 && (mass - 1.0).abs() < 0.02, format!("round trip {rt:.1e}, mass {mass:.4}")))
        }),
        run("learner: exact model has zero loss", || {
            let params = MassSpringParams::default();
            let model = exact_mass_spring_model(params);
            let h = SystemParams::MassSpring(params).hamiltonian()?;
            let s = PhaseState::new(vec![0.5], vec![0.2])?;
            let (dq, dp) = h.vector_field(&s)?;
            let mut tape = Tape::new();
            let b = model.bind(&mut tape);
            let l = hnn_loss(&b, &mut tape, &s, &dq, &dp)?;
            let v = tape.scalar_value(l);
            Ok((v < 1e-20, format!("loss {v:.1e}")))
        }),
        run("reports: mse symmetry and energy gauge", || {
            let h = SystemParams::defaults(System::Pendulum, 0.0).hamiltonian()?;
            let s0 = PhaseState::new(vec![0.9], vec![0.0])?;
            let a = rollout(h.as_ref(), &s0, &IntegratorSpec::new(IntegratorKind::Leapfrog, 0.125, 30))?;
            let b = rollout(h.as_ref(), &s0, &IntegratorSpec::new(IntegratorKind::Euler, 0.125, 30))?;
            let ab = per_step_mse(&a, &b)?;
            let ba = per_step_mse(&b, &a)?;
            let aa = per_step_mse(&a, &a)?;
            let symmetric = ab.mean == ba.mean && aa.mean.iter().all(|&x| x == 0.0);
            let model = exact_mass_spring_model(MassSpringParams::default());
            let mut shifted = model.clone();
            let last = shifted.potential_mut().layers_mut().last_mut().expect("layers");
            last.bias[0] += 3.0;
            let ms = SystemParams::defaults(System::MassSpring, 0.0).hamiltonian()?;
            let t = rollout(ms.as_ref(), &PhaseState::new(vec![0.5], vec![0.0])?, &IntegratorSpec::new(IntegratorKind::Euler, 0.125, 30))?;
            let v1 = hamiltonian_variance(&model, &t)?;
            let v2 = hamiltonian_variance(&shifted, &t)?;
            let gauge = (v1 - v2).abs() <= 1e-12 * v1.max(1e-300);
            Ok((symmetric && gauge, format!("symmetric {symmetric}, var(H) {v1:.3e} vs {v2:.3e}")))
        }),
        run("reports: kde mass grows with the domain", || {
            let mut rng = RngStream::new(504);
            let samples: Vec<[f64; 2]> = (0..200).map(|_| [rng.standard_normal(), rng.standard_normal()]).collect();
            let mut masses = Vec::new();
            for half in [1.0, 2.0, 4.0, 8.0] {
                let grid = Grid2d::square(half, 120);
                masses.push(grid.integrate(&kde_grid(&samples, 0.3, &grid)?));
            }
            let monotone = masses.windows(2).all(|w| w[1] >= w[0] - 1e-9);
            let last = *masses.last().expect("non-empty");
            Ok((monotone && (last - 1.0).abs() < 0.02, format!("masses {masses:.3?}")))
        }),
        run("datagen: rendering", || {
            let spec = RenderSpec::for_system(System::ThreeBody, 32);
            let black = render_frame(&spec, &[])?.data.iter().all(|&b| b == 0);
            let pos = [[0.2, 0.1], [-0.8, 0.5], [0.6, -0.9]];
            let same = render_frame(&spec, &pos)? == render_frame(&spec, &pos)?;
            Ok((black && same, format!("empty black {black}, deterministic {same}")))
        }),
    ]
}

/// Criteria checks at desk scale followed by the invariant suite.
pub fn run_all() -> Vec<CheckResult> {
    let mut out = vec![
        symplecticity(),
        reversibility(),
        elbo_bound(),
        gradient_integrity(),
        dataset_fidelity(1000, 200),
    ];
    out.extend(invariant_suite());
    out
}

pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for r in results {
        s.push_str(&format!(
            "{:<4} {:<width$}  {:>7.2}s  {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        ));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    s.push_str(&format!("{} checks, {} failed\n", results.len(), failed));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariant_suite_passes() {
        for r in invariant_suite() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn table_counts_failures() {
        let rows = [
            CheckResult { name: "a".into(), passed: true, detail: String::new(), seconds: 0.0 },
            CheckResult { name: "b".into(), passed: false, detail: "x".into(), seconds: 0.0 },
        ];
        let t = format_table(&rows);
        assert!(t.contains("PASS a") && t.contains("FAIL b") && t.ends_with("2 checks, 1 failed\n"));
    }
}
