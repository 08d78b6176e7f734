use std::path::PathBuf;

use clap::Args;
use hamflow::datagen::{write_dataset, DatasetSpec};
use hamflow::systems::System;
use serde::{Deserialize, Serialize};

use crate::config::{echo, resolve, Overrides};
use crate::{require_out, CliError, Common};

#[derive(Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    system: Option<System>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Integration steps per trajectory; each trajectory has one more state.
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    /// Initial-state radius range as `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    radius_range: Option<Vec<f64>>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Skip frame rendering.
    #[arg(long)]
    no_frames: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub out: Option<PathBuf>,
    pub dataset: DatasetSpec,
}

pub fn run(a: GenerateArgs) -> Result<(), CliError> {
    let mut o = Overrides::new();
    o.set("out", a.common.out.clone())
        .set("dataset.system", a.system)
        .set("dataset.n_train", a.n_train)
        .set("dataset.n_test", a.n_test)
        .set("dataset.n_steps", a.n_steps)
        .set("dataset.dt", a.dt)
        .set("dataset.noise_std", a.noise_std)
        .set("dataset.radius_range", a.radius_range.map(|v| (v[0], v[1])))
        .set("dataset.image_size", a.image_size)
        .set("dataset.render", a.no_frames.then_some(false))
        .set("dataset.seed", a.seed);
    let mut cfg: GenerateConfig = resolve(a.common.config.as_deref(), o)?;
    cfg.dataset = cfg.dataset.resolved();
    cfg.dataset.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = require_out(&cfg.out)?;
    let manifest = write_dataset(&cfg.dataset, &out)?;
    echo(&out, &cfg)?;
    println!(
        "wrote {} train and {} test {} trajectories ({} steps, dt {}) to {}",
        manifest.counts.train,
        manifest.counts.test,
        manifest.system,
        manifest.n_steps,
        manifest.dt,
        out.display()
    );
    if manifest.resampled_initial_states > 0 {
        println!("resampled {} initial states after numerical failures", manifest.resampled_initial_states);
    }
    if manifest.clipped_bodies > 0 {
        println!("{} body draws fell partly outside the frame", manifest.clipped_bodies);
    }
    Ok(())
}
