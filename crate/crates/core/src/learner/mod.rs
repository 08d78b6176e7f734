//! Learning separable Hamiltonians from observed phase-space trajectories.

use serde::{Deserialize, Serialize};

use crate::diffgraph::{Tape, Var};
use crate::energy::EnergyFunction;
use crate::error::{check_dim, Error, Result};
use crate::integrators::{rollout, IntegratorKind, IntegratorSpec};
use crate::models::{accumulate_grads, AdamState, BoundHamiltonian, SeparableHamiltonianModel};
use crate::phase::{PhaseState, Trajectory};
use crate::reports::{hamiltonian_variance, per_step_errors, MetricSeries};
use crate::rng::RngStream;
use crate::train::{draw_batch, mean_gradient};

/// One state with its time derivative `(dq/dt, dp/dt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeSample {
    pub state: PhaseState,
    pub dq: Vec<f64>,
    pub dp: Vec<f64>,
}

/// Observed trajectories, optionally with exact time derivatives per state.
#[derive(Clone, Debug)]
pub struct StateDataset {
    trajectories: Vec<Trajectory>,
    derivatives: Option<Vec<Vec<DerivativeSample>>>,
}

impl StateDataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        if let Some(first) = trajectories.first() {
            for t in &trajectories {
                check_dim(first.dim(), t.dim())?;
            }
        }
        Ok(Self {
            trajectories,
            derivatives: None,
        })
    }

    /// Attaches the vector field of `h` at every state as derivative targets.
    pub fn with_exact_derivatives<H: EnergyFunction + ?Sized>(trajectories: Vec<Trajectory>, h: &H) -> Result<Self> {
        let mut ds = Self::new(trajectories)?;
        let derivs = ds
            .trajectories
            .iter()
            .map(|t| {
                t.states()
                    .iter()
                    .map(|s| {
                        let (dq, dp) = h.vector_field(s)?;
                        Ok(DerivativeSample { state: s.clone(), dq, dp })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        ds.derivatives = Some(derivs);
        Ok(ds)
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.trajectories.first().map(Trajectory::dim)
    }

    pub fn has_exact_derivatives(&self) -> bool {
        self.derivatives.is_some()
    }

    /// Derivative targets for every state. Without exact targets they are
    /// forward differences `(s_{t+1} − s_t)/dt`, so the last state of each
    /// trajectory is dropped.
    pub fn derivative_samples(&self) -> Vec<DerivativeSample> {
        if let Some(d) = &self.derivatives {
            return d.iter().flatten().cloned().collect();
        }
        let mut out = Vec::new();
        for t in &self.trajectories {
            for w in t.states().windows(2) {
                let inv = 1.0 / t.dt();
                let dq = w[1].q().iter().zip(w[0].q()).map(|(a, b)| (a - b) * inv).collect();
                let dp = w[1].p().iter().zip(w[0].p()).map(|(a, b)| (a - b) * inv).collect();
                out.push(DerivativeSample {
                    state: w[0].clone(),
                    dq,
                    dp,
                });
            }
        }
        out
    }
}

/// `½[|∂H/∂p − dq/dt|² + |∂H/∂q + dp/dt|²]` at state `s`.
pub fn hnn_loss(bound: &BoundHamiltonian, tape: &mut Tape, s: &PhaseState, dq_dt: &[f64], dp_dt: &[f64]) -> Result<Var> {
    check_dim(bound.dim(), s.dim())?;
    check_dim(s.dim(), dq_dt.len())?;
    check_dim(s.dim(), dp_dt.len())?;
    let q = tape.input(s.q());
    let p = tape.input(s.p());
    let dh_dp = bound.grad_p(tape, p);
    let dh_dq = bound.grad_q(tape, q);
    let tq = tape.constant(dq_dt);
    let tp = tape.constant(dp_dt);
    let rq = tape.sub(dh_dp, tq);
    let rp = tape.add(dh_dq, tp);
    let a = tape.dot(rq, rq);
    let b = tape.dot(rp, rp);
    let sum = tape.add(a, b);
    Ok(tape.scale_by(sum, 0.5))
}

/// `|p_t − (q_{t+1} − q_t)|²`.
pub fn coordinate_constraint_loss(q_t: &[f64], q_next: &[f64], p_t: &[f64]) -> Result<f64> {
    check_dim(q_t.len(), q_next.len())?;
    check_dim(q_t.len(), p_t.len())?;
    Ok(q_t
        .iter()
        .zip(q_next)
        .zip(p_t)
        .map(|((a, b), p)| (p - (b - a)).powi(2))
        .sum())
}

/// Mean squared error between a leapfrog rollout from `traj`'s first state
/// and the observed states `1..len`, averaged over steps and coordinates.
/// Aborts with the step index if the rollout leaves the finite range.
pub fn rollout_loss(bound: &BoundHamiltonian, tape: &mut Tape, traj: &Trajectory) -> Result<Var> {
    if traj.len() < 2 {
        return Err(Error::invalid("rollout_loss needs at least two states"));
    }
    check_dim(bound.dim(), traj.dim())?;
    let s0 = &traj.states()[0];
    let dt = tape.scalar(traj.dt());
    let mut q = tape.input(s0.q());
    let mut p = tape.input(s0.p());
    let mut force = None;
    let mut total: Option<Var> = None;
    for (step, target) in traj.states()[1..].iter().enumerate() {
        let (q1, p1, f1) = bound.leapfrog(tape, q, p, force, dt);
        if !tape.value(q1).iter().chain(tape.value(p1)).all(|v| v.is_finite()) {
            return Err(Error::Numerical {
                step: step + 1,
                detail: "non-finite state in rollout".into(),
            });
        }
        let tq = tape.constant(target.q());
        let tp = tape.constant(target.p());
        let eq = tape.sub(q1, tq);
        let ep = tape.sub(p1, tp);
        let a = tape.dot(eq, eq);
        let b = tape.dot(ep, ep);
        let e = tape.add(a, b);
        total = Some(match total {
            Some(t) => tape.add(t, e),
            None => e,
        });
        q = q1;
        p = p1;
        force = Some(f1);
    }
    let n = ((traj.len() - 1) * 2 * traj.dim()) as f64;
    Ok(tape.scale_by(total.expect("at least one step"), 1.0 / n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerMode {
    Hnn,
    Rollout,
}

impl std::str::FromStr for LearnerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hnn" => Ok(Self::Hnn),
            "rollout" => Ok(Self::Rollout),
            _ => Err(Error::invalid(format!("unknown learner mode '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub mode: LearnerMode,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Rollout window length in steps; longer trajectories are cut into
    /// random windows of this length.
    pub truncation: usize,
    /// Window length at the first step. The window grows linearly to
    /// `truncation` over the first half of training; long rollouts from a
    /// random initialization otherwise collapse the model to a constant.
    pub warmup_window: usize,
    /// Metrics are evaluated every this many Adam steps and after the last.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            mode: LearnerMode::Rollout,
            hidden: vec![32, 32],
            lr: 1e-3,
            steps: 2000,
            batch_size: 32,
            truncation: 30,
            warmup_window: 4,
            eval_every: 100,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    /// Rollout window length used at Adam step `step` (1-based).
    pub fn window_at(&self, step: usize) -> usize {
        let start = self.warmup_window.min(self.truncation);
        let ramp = (self.steps / 2).max(1);
        let frac = (step.saturating_sub(1) as f64 / ramp as f64).min(1.0);
        start + ((self.truncation - start) as f64 * frac).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.truncation == 0 || self.eval_every == 0 || self.warmup_window == 0 {
            return Err(Error::invalid("steps, batch_size, truncation, warmup_window and eval_every must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub hamiltonian_variance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetrics {
    pub rows: Vec<MetricRow>,
    /// Per-step rollout MSE on the held-out set after training.
    pub final_rollout_mse: Option<MetricSeries>,
}

impl TrainingMetrics {
    /// `step_index,train_mse,test_mse,hamiltonian_variance`.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "step_index,train_mse,test_mse,hamiltonian_variance")?;
        for r in &self.rows {
            writeln!(w, "{},{:e},{:e},{:e}", r.step, r.train_mse, r.test_mse, r.hamiltonian_variance)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Leapfrog rollouts of `model` from each trajectory's first state compared
/// with the observed states. Returns the per-step MSE series (step 0
/// included) and the mean variance of the model energy along the rollouts.
pub fn evaluate_rollouts<H: EnergyFunction + ?Sized>(model: &H, trajectories: &[Trajectory]) -> Result<(MetricSeries, f64)> {
    let mut runs = Vec::with_capacity(trajectories.len());
    let mut var = 0.0;
    for t in trajectories {
        let spec = IntegratorSpec::new(IntegratorKind::Leapfrog, t.dt(), t.len() - 1);
        let pred = rollout(model, &t.states()[0], &spec)?;
        runs.push(per_step_errors(&pred, t)?);
        var += hamiltonian_variance(model, &pred)?;
    }
    Ok((MetricSeries::aggregate("rollout_mse", &runs)?, var / trajectories.len() as f64))
}

/// Mean of a rollout MSE series over the predicted steps (step 0 excluded).
pub fn mean_predicted_mse(series: &MetricSeries) -> f64 {
    let tail = &series.mean[1.min(series.mean.len())..];
    if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Mean squared vector-field residual `|∂H/∂p − dq/dt|² + |∂H/∂q + dp/dt|²`.
pub fn vector_field_error<H: EnergyFunction + ?Sized>(model: &H, samples: &[DerivativeSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let mut total = 0.0;
    for s in samples {
        let gp = model.grad_p(&s.state)?;
        let gq = model.grad_q(&s.state)?;
        total += gp.iter().zip(&s.dq).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        total += gq.iter().zip(&s.dp).map(|(a, b)| (a + b).powi(2)).sum::<f64>();
    }
    Ok(total / samples.len() as f64)
}

/// Called after each metrics evaluation with the current model; an error
/// stops training.
pub type Observer<'a> = &'a mut dyn FnMut(&MetricRow, &SeparableHamiltonianModel) -> Result<()>;

fn random_window(traj: &Trajectory, len: usize, rng: &mut RngStream) -> Result<Trajectory> {
    let states = traj.len().min(len + 1);
    let start = ((rng.uniform() * (traj.len() - states + 1) as f64) as usize).min(traj.len() - states);
    Trajectory::new(traj.states()[start..start + states].to_vec(), traj.dt(), traj.integrator())
}

/// Trains a separable Hamiltonian on `train`; metrics are computed on
/// `test`. Training stops with an error on divergence, after the observer
/// has seen the last finite model.
pub fn train_learner(
    train: &StateDataset,
    test: &StateDataset,
    config: &LearnerConfig,
    mut observer: Option<Observer<'_>>,
) -> Result<(SeparableHamiltonianModel, TrainingMetrics)> {
    config.validate()?;
    let dim = train.dim().ok_or_else(|| Error::invalid("training set is empty"))?;
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    check_dim(dim, test.dim().unwrap_or(dim))?;
    let root = RngStream::new(config.seed);
    let mut model = SeparableHamiltonianModel::new(dim, &config.hidden, &mut root.fork(0));
    let mut rng = root.fork(1);
    let mut params = model.params();
    let mut adam = AdamState::new(params.len(), config.lr);
    let samples = match config.mode {
        LearnerMode::Hnn => train.derivative_samples(),
        LearnerMode::Rollout => Vec::new(),
    };
    let n_items = match config.mode {
        LearnerMode::Hnn => samples.len(),
        LearnerMode::Rollout => train.len(),
    };
    if n_items == 0 {
        return Err(Error::invalid("training set has no usable examples"));
    }
    if config.mode == LearnerMode::Rollout && train.trajectories().iter().any(|t| t.len() < 2) {
        return Err(Error::invalid("rollout training needs trajectories of at least two states"));
    }

    let mut metrics = TrainingMetrics::default();
    for step in 1..=config.steps {
        let batch = draw_batch(&mut rng, n_items, config.batch_size);
        let windows = match config.mode {
            LearnerMode::Rollout => batch
                .iter()
                .map(|&i| random_window(&train.trajectories()[i], config.window_at(step), &mut rng))
                .collect::<Result<Vec<_>>>()?,
            LearnerMode::Hnn => Vec::new(),
        };
        let n_params = params.len();
        let m = &model;
        let (loss, grad) = mean_gradient(&batch, n_params, |slot, i| {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape);
            let l = match config.mode {
                LearnerMode::Hnn => {
                    let s = &samples[i];
                    hnn_loss(&bound, &mut tape, &s.state, &s.dq, &s.dp)?
                }
                LearnerMode::Rollout => rollout_loss(&bound, &mut tape, &windows[slot])?,
            };
            let g = tape.backward(l)?;
            let mut out = vec![0.0; n_params];
            accumulate_grads(&g, &bound.param_vars(), &mut out);
            Ok((tape.scalar_value(l), out))
        })
        .map_err(|e| at_step(e, step))?;
        if !loss.is_finite() {
            return Err(Error::Numerical {
                step,
                detail: "training loss diverged".into(),
            });
        }
        adam.step(&mut params, &grad).map_err(|e| at_step(e, step))?;
        model.set_params(&params)?;

        if step % config.eval_every == 0 || step == config.steps {
            let (series, var) = evaluate_rollouts(&model, test.trajectories()).map_err(|e| at_step(e, step))?;
            let row = MetricRow {
                step,
                train_mse: loss,
                test_mse: mean_predicted_mse(&series),
                hamiltonian_variance: var,
            };
            if let Some(obs) = observer.as_mut() {
                obs(&row, &model)?;
            }
            metrics.rows.push(row);
            if step == config.steps {
                metrics.final_rollout_mse = Some(series);
            }
        }
    }
    Ok((model, metrics))
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Numerical { detail, step: inner } => Error::Numerical {
            step,
            detail: format!("{detail} (rollout step {inner})"),
        },
        Error::NonFinite(detail) => Error::Numerical { step, detail },
        other => other,
    }
}
