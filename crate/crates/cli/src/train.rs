use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use hamflow::datagen::load_dataset;
use hamflow::error::Error;
use hamflow::learner::{
    mean_predicted_mse, train_learner, vector_field_error, LearnerConfig, LearnerMode, MetricRow, StateDataset,
    TrainingMetrics,
};
use hamflow::models::{GaussianEncoder, SeparableHamiltonianModel};
use hamflow::nhf::{
    mean_nll, train_nhf, train_rnvp, write_curve_csv, DensityFlow, DensityKind, FlowStack, FlowTraining, NhfConfig,
    PriorSpec, RnvpConfig, RnvpDensity,
};
use hamflow::reports::write_mse_csv;
use hamflow::rng::RngStream;
use serde::{Deserialize, Serialize};

use crate::config::{echo, resolve, Overrides};
use crate::{require_out, CliError, Common};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Hnn,
    Rollout,
    Nhf,
    Rnvp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Observations {
    Clean,
    Noisy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Derivatives {
    /// Time derivatives from the generating system's Hamiltonian.
    Exact,
    /// Forward differences of consecutive observed states.
    FiniteDifference,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    mode: Option<TrainMode>,
    /// Dataset directory written by `generate` (hnn and rollout modes).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    observations: Option<Observations>,
    #[arg(long, value_enum)]
    derivatives: Option<Derivatives>,
    /// Synthetic target for nhf and rnvp modes.
    #[arg(long)]
    density: Option<DensityKind>,
    /// Number of training samples drawn from the target density.
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    truncation: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub out: Option<PathBuf>,
    pub mode: TrainMode,
    pub data: Option<PathBuf>,
    pub observations: Observations,
    pub derivatives: Derivatives,
    pub learner: LearnerConfig,
    pub density: DensityKind,
    pub n_samples: usize,
    pub n_test_samples: usize,
    /// Seed for drawing target samples.
    pub density_seed: u64,
    pub nhf: NhfConfig,
    pub rnvp: RnvpConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            out: None,
            mode: TrainMode::Rollout,
            data: None,
            observations: Observations::Noisy,
            derivatives: Derivatives::FiniteDifference,
            learner: LearnerConfig::default(),
            density: DensityKind::Mixture2,
            n_samples: 1000,
            n_test_samples: 1000,
            density_seed: 0,
            nhf: NhfConfig::default(),
            rnvp: RnvpConfig::default(),
        }
    }
}

/// Sidecar describing a density checkpoint, read back by `eval`.
#[derive(Debug, Serialize, Deserialize)]
pub struct FlowInfo {
    pub mode: TrainMode,
    pub prior: PriorSpec,
    pub density: DensityKind,
    pub n_test_samples: usize,
    pub density_seed: u64,
}

pub const FLOW_INFO: &str = "flow.json";

fn overrides(a: &TrainArgs, mode: Option<TrainMode>) -> Overrides {
    let mut o = Overrides::new();
    o.set("out", a.common.out.clone())
        .set("mode", a.mode)
        .set("data", a.data.clone())
        .set("observations", a.observations)
        .set("derivatives", a.derivatives)
        .set("density", a.density)
        .set("n_samples", a.n_samples)
        .set("density_seed", a.seed);
    let Some(mode) = mode else { return o };
    let (model, train) = match mode {
        TrainMode::Hnn | TrainMode::Rollout => ("learner", "learner"),
        TrainMode::Nhf => ("nhf", "nhf.train"),
        TrainMode::Rnvp => ("rnvp", "rnvp.train"),
    };
    o.set(&format!("{model}.hidden"), a.hidden.clone())
        .set(&format!("{train}.steps"), a.steps)
        .set(&format!("{train}.lr"), a.lr)
        .set(&format!("{train}.batch_size"), a.batch_size)
        .set(&format!("{train}.eval_every"), a.eval_every)
        .set(&format!("{train}.seed"), a.seed);
    if model == "learner" {
        o.set("learner.truncation", a.truncation);
    }
    o
}

pub fn run(a: TrainArgs, threads: usize) -> Result<(), CliError> {
    // the mode decides where hyperparameter flags land
    let first: TrainConfig = resolve(a.common.config.as_deref(), overrides(&a, None))?;
    let mut cfg: TrainConfig = resolve(a.common.config.as_deref(), overrides(&a, Some(first.mode)))?;
    let out = require_out(&cfg.out)?;
    println!(
        "threads: {threads}; per-example gradients are reduced in a fixed order, so results are bit-identical for any thread count"
    );
    match cfg.mode {
        TrainMode::Hnn | TrainMode::Rollout => {
            cfg.learner.mode = if cfg.mode == TrainMode::Hnn { LearnerMode::Hnn } else { LearnerMode::Rollout };
            cfg.learner.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            train_dynamics(&cfg, &out)
        }
        TrainMode::Nhf | TrainMode::Rnvp => train_density(&cfg, &out),
    }
}

fn diverged(e: Error, out: &Path, what: &str) -> CliError {
    if let Error::Numerical { step, .. } = &e {
        eprintln!("training diverged at step {step}; the last finite {what} checkpoint is kept in {}", out.display());
    }
    CliError::Lib(e)
}

fn train_dynamics(cfg: &TrainConfig, out: &Path) -> Result<(), CliError> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Usage("hnn and rollout modes need a dataset (--data)".into()))?;
    if !data.join("manifest.json").is_file() {
        return Err(CliError::Usage(format!("{} is not a dataset directory", data.display())));
    }
    let ds = load_dataset(data)?;
    let h = ds.manifest.params.hamiltonian()?;
    let observed = match cfg.observations {
        Observations::Clean => ds.train.clean,
        Observations::Noisy => ds.train.noisy,
    };
    let train = match (cfg.mode, cfg.derivatives) {
        (TrainMode::Hnn, Derivatives::Exact) => StateDataset::with_exact_derivatives(observed, h.as_ref())?,
        _ => StateDataset::new(observed)?,
    };
    let test_trajs = ds.test.clean;
    let test = StateDataset::with_exact_derivatives(test_trajs, h.as_ref())?;
    echo(out, cfg)?;

    let ckpt = out.join("model.ckpt");
    let metrics_path = out.join("metrics.csv");
    let mut rows: Vec<MetricRow> = Vec::new();
    let mut observer = |row: &MetricRow, model: &SeparableHamiltonianModel| -> hamflow::error::Result<()> {
        model.to_checkpoint().save(&ckpt)?;
        rows.push(row.clone());
        TrainingMetrics {
            rows: rows.clone(),
            final_rollout_mse: None,
        }
        .write_csv(&metrics_path)?;
        println!(
            "step {:>6}  train mse {:.3e}  test mse {:.3e}  var(H) {:.3e}",
            row.step, row.train_mse, row.test_mse, row.hamiltonian_variance
        );
        Ok(())
    };
    let (model, metrics) =
        train_learner(&train, &test, &cfg.learner, Some(&mut observer)).map_err(|e| diverged(e, out, "model"))?;
    model.to_checkpoint().save(&ckpt)?;
    metrics.write_csv(&metrics_path)?;
    let mut summary = serde_json::json!({ "mode": cfg.mode, "steps": cfg.learner.steps });
    if let Some(series) = &metrics.final_rollout_mse {
        write_mse_csv(out.join("mse.csv"), series)?;
        summary["test_rollout_mse"] = serde_json::json!(mean_predicted_mse(series));
    }
    let vf = vector_field_error(&model, &test.derivative_samples())?;
    summary["test_vector_field_error"] = serde_json::json!(vf);
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json") + "\n")?;
    println!("held-out vector-field error {vf:.3e}; wrote {}", out.display());
    Ok(())
}

type Samples = Vec<Vec<f64>>;

fn density_samples(cfg: &TrainConfig) -> Result<(Samples, Samples), CliError> {
    if cfg.n_samples == 0 || cfg.n_test_samples == 0 {
        return Err(CliError::Usage("n_samples and n_test_samples must be positive".into()));
    }
    let target = cfg.density.target();
    let root = RngStream::new(cfg.density_seed);
    Ok((
        target.sample(&mut root.fork(0), cfg.n_samples),
        target.sample(&mut root.fork(1), cfg.n_test_samples),
    ))
}

/// Held-out samples as drawn by `train`, for `eval` to reuse.
pub fn held_out(info: &FlowInfo) -> Vec<Vec<f64>> {
    info.density
        .target()
        .sample(&mut RngStream::new(info.density_seed).fork(1), info.n_test_samples)
}

fn train_density(cfg: &TrainConfig, out: &Path) -> Result<(), CliError> {
    let (train, test) = density_samples(cfg)?;
    let prior = match cfg.mode {
        TrainMode::Nhf => cfg.nhf.prior,
        _ => cfg.rnvp.prior,
    };
    let info = FlowInfo {
        mode: cfg.mode,
        prior,
        density: cfg.density,
        n_test_samples: cfg.n_test_samples,
        density_seed: cfg.density_seed,
    };
    echo(out, cfg)?;
    std::fs::write(out.join(FLOW_INFO), serde_json::to_string_pretty(&info).expect("json") + "\n")?;
    let flow_path = out.join("flow.ckpt");
    let enc_path = out.join("encoder.ckpt");
    let summary = match cfg.mode {
        TrainMode::Nhf => {
            let mut obs = |step: usize, f: &FlowStack, e: &GaussianEncoder| -> hamflow::error::Result<()> {
                f.to_checkpoint().save(&flow_path)?;
                e.to_checkpoint().save(&enc_path)?;
                println!("step {step:>6}  dt {:.4}", f.dt());
                Ok(())
            };
            let run = train_nhf(&train, &cfg.nhf, Some(&mut obs)).map_err(|e| diverged(e, out, "flow"))?;
            run.flow.to_checkpoint().save(&flow_path)?;
            finish(run, &prior, &test, cfg, out)?
        }
        _ => {
            let mut obs = |step: usize, f: &RnvpDensity, e: &GaussianEncoder| -> hamflow::error::Result<()> {
                f.flow().to_checkpoint().save(&flow_path)?;
                e.to_checkpoint().save(&enc_path)?;
                println!("step {step:>6}");
                Ok(())
            };
            let run = train_rnvp(&train, &cfg.rnvp, Some(&mut obs)).map_err(|e| diverged(e, out, "flow"))?;
            run.flow.flow().to_checkpoint().save(&flow_path)?;
            finish(run, &prior, &test, cfg, out)?
        }
    };
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json") + "\n")?;
    Ok(())
}

fn finish<F: DensityFlow>(
    run: FlowTraining<F>,
    prior: &PriorSpec,
    test: &[Vec<f64>],
    cfg: &TrainConfig,
    out: &Path,
) -> Result<serde_json::Value, CliError> {
    run.encoder.to_checkpoint().save(out.join("encoder.ckpt"))?;
    write_curve_csv(out.join("curve.csv"), &run.curve)?;
    let nll = mean_nll(&run.flow, prior, &run.encoder, test, &mut RngStream::new(cfg.density_seed).fork(2))?;
    let target = cfg.density.target();
    let mut summary = serde_json::json!({
        "mode": cfg.mode,
        "density": cfg.density,
        "final_negative_elbo": run.curve.last().map(|c| c.negative_elbo),
        "test_nll": nll,
    });
    if target.std() > 0.0 {
        let analytic = target.mean_nll(test)?;
        summary["target_nll"] = serde_json::json!(analytic);
        println!("held-out nll {nll:.4} (target density {analytic:.4}); wrote {}", out.display());
    } else {
        println!("held-out nll {nll:.4}; wrote {}", out.display());
    }
    Ok(summary)
}
