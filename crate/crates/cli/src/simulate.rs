use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Args;
use hamflow::datagen::{body_positions, render_frame, sample_initial_state, write_ppm, RenderSpec};
use hamflow::energy::EnergyFunction;
use hamflow::integrators::{rollout, IntegratorKind, IntegratorSpec};
use hamflow::phase::PhaseState;
use hamflow::rng::RngStream;
use hamflow::systems::{System, SystemParams, DATASET_SOFTENING};
use serde::{Deserialize, Serialize};

use crate::config::{echo, resolve, Overrides};
use crate::{require_out, CliError, Common};

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    system: Option<System>,
    #[arg(long)]
    integrator: Option<IntegratorKind>,
    #[arg(long)]
    steps: Option<usize>,
    /// Step size; negative values roll backward in time.
    #[arg(long, allow_negative_numbers = true)]
    dt: Option<f64>,
    /// Multiplies `dt`: 2.0 plays the rollout at double speed.
    #[arg(long, allow_negative_numbers = true)]
    dt_scale: Option<f64>,
    /// Initial positions, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    q: Option<Vec<f64>>,
    /// Initial momenta, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    p: Option<Vec<f64>>,
    /// Seed for the initial state when `--q`/`--p` are absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Also render one PPM frame per state.
    #[arg(long)]
    frames: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub out: Option<PathBuf>,
    pub system: System,
    pub params: Option<SystemParams>,
    pub integrator: IntegratorKind,
    pub steps: usize,
    pub dt: f64,
    pub dt_scale: f64,
    pub q: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
    pub seed: u64,
    pub frames: bool,
    pub image_size: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            out: None,
            system: System::MassSpring,
            params: None,
            integrator: IntegratorKind::Leapfrog,
            steps: 30,
            dt: 0.125,
            dt_scale: 1.0,
            q: None,
            p: None,
            seed: 0,
            frames: false,
            image_size: 64,
        }
    }
}

pub fn run(a: SimulateArgs) -> Result<(), CliError> {
    let mut o = Overrides::new();
    o.set("out", a.common.out.clone())
        .set("system", a.system)
        .set("integrator", a.integrator)
        .set("steps", a.steps)
        .set("dt", a.dt)
        .set("dt_scale", a.dt_scale)
        .set("q", a.q)
        .set("p", a.p)
        .set("seed", a.seed)
        .set("frames", a.frames.then_some(true));
    let mut cfg: SimulateConfig = resolve(a.common.config.as_deref(), o)?;
    let out = require_out(&cfg.out)?;
    let params = cfg
        .params
        .clone()
        .unwrap_or_else(|| SystemParams::defaults(cfg.system, DATASET_SOFTENING));
    let h = params.hamiltonian().map_err(|e| CliError::Usage(e.to_string()))?;
    if h.dim() != cfg.system.dim() {
        return Err(CliError::Usage(format!("params do not describe a {} system", cfg.system)));
    }
    let s0 = match (&cfg.q, &cfg.p) {
        (Some(q), Some(p)) => PhaseState::new(q.clone(), p.clone()).map_err(|e| CliError::Usage(e.to_string()))?,
        (None, None) => sample_initial_state(&params, cfg.system.default_radius_range(), &mut RngStream::new(cfg.seed))?,
        _ => return Err(CliError::Usage("give both --q and --p, or neither".into())),
    };
    if s0.dim() != h.dim() {
        return Err(CliError::Usage(format!("initial state has {} coordinates, the system needs {}", s0.dim(), h.dim())));
    }
    let dt = cfg.dt * cfg.dt_scale;
    let spec = IntegratorSpec::new(cfg.integrator, dt, cfg.steps);
    spec.validate_for(h.as_ref()).map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.params = Some(params.clone());
    cfg.q = Some(s0.q().to_vec());
    cfg.p = Some(s0.p().to_vec());
    echo(&out, &cfg)?;

    let traj = rollout(h.as_ref(), &s0, &spec)?;
    let n = h.dim();
    let mut tw = BufWriter::new(File::create(out.join("trajectory.csv"))?);
    let mut ew = BufWriter::new(File::create(out.join("energy.csv"))?);
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((0..n).map(|i| format!("q{i}")));
    header.extend((0..n).map(|i| format!("p{i}")));
    writeln!(tw, "{}", header.join(","))?;
    writeln!(ew, "step,t,energy")?;
    for (i, s) in traj.states().iter().enumerate() {
        let t = i as f64 * dt;
        let coords: Vec<String> = s.concat().iter().map(|x| x.to_string()).collect();
        writeln!(tw, "{i},{t},{}", coords.join(","))?;
        writeln!(ew, "{i},{t},{}", h.energy(s)?)?;
    }
    tw.flush()?;
    ew.flush()?;
    if cfg.frames {
        let render = RenderSpec::for_system(cfg.system, cfg.image_size);
        let dir = out.join("frames");
        std::fs::create_dir_all(&dir)?;
        for (i, s) in traj.states().iter().enumerate() {
            let frame = render_frame(&render, &body_positions(&params, s.q()))?;
            write_ppm(dir.join(format!("step{i:03}.ppm")), &frame)?;
        }
    }
    println!(
        "{} {} steps of {} at dt {dt}: {} states written to {}",
        cfg.system,
        cfg.steps,
        cfg.integrator,
        traj.len(),
        out.display()
    );
    Ok(())
}
