use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::models::{AdamState, GaussianEncoder};
use crate::rng::RngStream;
use crate::train::{draw_batch, mean_gradient};

use super::flow::FlowStack;
use super::objective::{draw_eps, negative_elbo_with_gradient, DensityFlow, RnvpDensity};
use super::prior::PriorSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowTrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Momentum draws per observation in the bound.
    pub n_samples: usize,
    pub encoder_hidden: Vec<usize>,
    /// The observer is called every this many steps and after the last.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for FlowTrainSettings {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            lr: 3e-4,
            n_samples: 1,
            encoder_hidden: vec![128, 128],
            eval_every: 100,
            seed: 0,
        }
    }
}

impl FlowTrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.n_samples == 0 || self.eval_every == 0 {
            return Err(Error::invalid("steps, batch_size, n_samples and eval_every must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NhfConfig {
    pub n_hamiltonians: usize,
    pub leapfrog_steps: usize,
    /// Initial step size; trained through `ln dt`.
    pub dt: f64,
    pub hidden: Vec<usize>,
    pub prior: PriorSpec,
    pub train: FlowTrainSettings,
}

impl Default for NhfConfig {
    fn default() -> Self {
        Self {
            n_hamiltonians: 1,
            leapfrog_steps: 2,
            dt: 0.125,
            hidden: vec![128, 128],
            prior: PriorSpec::default(),
            train: FlowTrainSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RnvpConfig {
    pub n_layers: usize,
    pub hidden: Vec<usize>,
    pub prior: PriorSpec,
    pub train: FlowTrainSettings,
}

impl Default for RnvpConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            hidden: vec![128, 128],
            prior: PriorSpec::default(),
            train: FlowTrainSettings::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub negative_elbo: f64,
}

#[derive(Clone, Debug)]
pub struct FlowTraining<F> {
    pub flow: F,
    pub encoder: GaussianEncoder,
    /// Minibatch negative ELBO after every step.
    pub curve: Vec<CurvePoint>,
}

/// `step,negative_elbo`.
pub fn write_curve_csv(path: impl AsRef<Path>, curve: &[CurvePoint]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,negative_elbo")?;
    for c in curve {
        writeln!(w, "{},{:e}", c.step, c.negative_elbo)?;
    }
    w.flush()?;
    Ok(())
}

/// Receives the step index and current parameters at each evaluation
/// point; an error stops training.
pub type FlowObserver<'a, F> = &'a mut dyn FnMut(usize, &F, &GaussianEncoder) -> Result<()>;

/// Maximizes the mean ELBO of `data` over flow and encoder parameters.
pub fn train_flow<F: DensityFlow>(
    mut flow: F,
    mut encoder: GaussianEncoder,
    prior: &PriorSpec,
    data: &[Vec<f64>],
    settings: &FlowTrainSettings,
    mut observer: Option<FlowObserver<'_, F>>,
) -> Result<FlowTraining<F>> {
    settings.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    let d = flow.data_dim();
    check_dim(d, encoder.dim())?;
    for x in data {
        check_dim(d, x.len())?;
    }
    let n_flow = flow.num_params();
    let mut params = flow.params();
    encoder.write_params(&mut params);
    let n_params = params.len();
    let mut adam = AdamState::new(n_params, settings.lr);
    let mut rng = RngStream::new(settings.seed).fork(2);
    let mut curve = Vec::with_capacity(settings.steps);

    for step in 1..=settings.steps {
        let batch = draw_batch(&mut rng, data.len(), settings.batch_size);
        let eps: Vec<Vec<Vec<f64>>> = batch.iter().map(|_| draw_eps(&mut rng, settings.n_samples, d)).collect();
        let (f, e) = (&flow, &encoder);
        let (loss, grad) = mean_gradient(&batch, n_params, |slot, i| {
            negative_elbo_with_gradient(f, e, prior, &data[i], &eps[slot])
        })
        .map_err(|err| match err {
            Error::NonFinite(detail) => Error::Numerical { step, detail },
            other => other,
        })?;
        adam.step(&mut params, &grad).map_err(|err| match err {
            Error::Numerical { detail, .. } => Error::Numerical { step, detail },
            other => other,
        })?;
        flow.set_params(&params[..n_flow]).map_err(|err| Error::Numerical {
            step,
            detail: err.to_string(),
        })?;
        encoder.read_params(&params[n_flow..])?;
        curve.push(CurvePoint { step, negative_elbo: loss });
        if step % settings.eval_every == 0 || step == settings.steps {
            if let Some(obs) = observer.as_mut() {
                obs(step, &flow, &encoder)?;
            }
        }
    }
    Ok(FlowTraining { flow, encoder, curve })
}

/// Trains a Hamiltonian flow stack with a Gaussian momentum encoder.
pub fn train_nhf(data: &[Vec<f64>], config: &NhfConfig, observer: Option<FlowObserver<'_, FlowStack>>) -> Result<FlowTraining<FlowStack>> {
    let d = data.first().ok_or_else(|| Error::invalid("training data is empty"))?.len();
    if config.n_hamiltonians == 0 {
        return Err(Error::invalid("n_hamiltonians must be positive"));
    }
    let root = RngStream::new(config.train.seed);
    let stack = FlowStack::random(d, config.n_hamiltonians, config.leapfrog_steps, config.dt, &config.hidden, &mut root.fork(0))?;
    let encoder = GaussianEncoder::new(d, &config.train.encoder_hidden, &mut root.fork(1));
    train_flow(stack, encoder, &config.prior, data, &config.train, observer)
}

/// Trains the RealNVP baseline on the same augmented space and bound.
pub fn train_rnvp(data: &[Vec<f64>], config: &RnvpConfig, observer: Option<FlowObserver<'_, RnvpDensity>>) -> Result<FlowTraining<RnvpDensity>> {
    let d = data.first().ok_or_else(|| Error::invalid("training data is empty"))?.len();
    if config.n_layers == 0 {
        return Err(Error::invalid("n_layers must be positive"));
    }
    let root = RngStream::new(config.train.seed);
    let flow = RnvpDensity::new(d, config.n_layers, &config.hidden, &mut root.fork(0));
    let encoder = GaussianEncoder::new(d, &config.train.encoder_hidden, &mut root.fork(1));
    train_flow(flow, encoder, &config.prior, data, &config.train, observer)
}
