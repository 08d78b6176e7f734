use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use hamflow::datagen::load_dataset;
use hamflow::energy::EnergyFunction;
use hamflow::integrators::{leapfrog_step, rollout, IntegratorKind, IntegratorSpec};
use hamflow::learner::{evaluate_rollouts, mean_predicted_mse};
use hamflow::models::{Checkpoint, GaussianEncoder, RnvpFlow, SeparableHamiltonianModel};
use hamflow::nhf::{
    importance_log_marginal, leapfrog_displacements, marginal_log_density_1d, mean_nll, DensityFlow, FlowStack,
    PriorSpec, RnvpDensity,
};
use hamflow::phase::{PhaseState, Trajectory};
use hamflow::reports::{
    hamiltonian_variance, kde_grid, write_grid_csv, write_hvar_csv, write_kde_csv, write_mse_csv, write_pgm, Grid2d,
    VarianceRow,
};
use hamflow::rng::RngStream;
use serde::{Deserialize, Serialize};

use crate::config::{echo, resolve, Overrides};
use crate::train::{held_out, FlowInfo, FLOW_INFO};
use crate::{require_out, CliError, Common};

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Model checkpoint (`model.ckpt` or `flow.ckpt` from `train`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory, needed for learned dynamics models.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Grid points per axis for density and energy grids.
    #[arg(long)]
    grid: Option<usize>,
    /// Grids span `[-half_width, half_width]` on each axis.
    #[arg(long)]
    half_width: Option<f64>,
    /// Flow samples used for the KDE.
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub grid: usize,
    pub half_width: Option<f64>,
    pub n_samples: usize,
    pub bandwidth: f64,
    /// Trajectories per split used for the variance table.
    pub max_trajectories: usize,
    /// Points per axis of the one-step vector field.
    pub field_points: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            out: None,
            checkpoint: None,
            data: None,
            grid: 100,
            half_width: None,
            n_samples: 2000,
            bandwidth: 0.3,
            max_trajectories: 100,
            field_points: 20,
            seed: 0,
        }
    }
}

pub fn run(a: EvalArgs) -> Result<(), CliError> {
    let mut o = Overrides::new();
    o.set("out", a.common.out.clone())
        .set("checkpoint", a.checkpoint)
        .set("data", a.data)
        .set("grid", a.grid)
        .set("half_width", a.half_width)
        .set("n_samples", a.n_samples)
        .set("seed", a.seed);
    let cfg: EvalConfig = resolve(a.common.config.as_deref(), o)?;
    let out = require_out(&cfg.out)?;
    let path = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::Usage("a checkpoint is required (--checkpoint)".into()))?;
    if !path.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    if cfg.grid < 2 || cfg.n_samples == 0 || cfg.field_points < 2 || cfg.max_trajectories == 0 || !(cfg.bandwidth > 0.0) {
        return Err(CliError::Usage("grid and field_points need at least 2 points; n_samples, max_trajectories and bandwidth must be positive".into()));
    }
    if let Some(w) = cfg.half_width {
        if !(w > 0.0) {
            return Err(CliError::Usage("half_width must be positive".into()));
        }
    }
    let ck = Checkpoint::load(&path)?;
    echo(&out, &cfg)?;
    match ck.kind.as_str() {
        "separable_hamiltonian" => eval_dynamics(&cfg, SeparableHamiltonianModel::from_checkpoint(&ck)?, &out),
        "flow_stack" => {
            let stack = FlowStack::from_checkpoint(&ck)?;
            let (info, encoder) = flow_sidecars(&path)?;
            let summary = eval_density(&cfg, &stack, &info, &encoder, &out)?;
            if stack.dim() == 1 {
                let grid = square(&cfg, 4.0, cfg.field_points);
                let pts: Vec<[f64; 2]> = grid.points().collect();
                write_field(&out.join("vector_field.csv"), &pts, &leapfrog_displacements(&stack, &pts)?)?;
                write_energy_curves(&out, &stack.hamiltonians()[0], &square(&cfg, 4.0, cfg.grid))?;
            }
            write_summary(&out, &summary)
        }
        "rnvp" => {
            let flow = RnvpDensity::from_flow(RnvpFlow::from_checkpoint(&ck)?)?;
            let (info, encoder) = flow_sidecars(&path)?;
            let summary = eval_density(&cfg, &flow, &info, &encoder, &out)?;
            write_summary(&out, &summary)
        }
        other => Err(CliError::Usage(format!("cannot evaluate a '{other}' checkpoint"))),
    }
}

fn square(cfg: &EvalConfig, default_half_width: f64, n: usize) -> Grid2d {
    Grid2d::square(cfg.half_width.unwrap_or(default_half_width), n)
}

fn write_summary(out: &Path, summary: &serde_json::Value) -> Result<(), CliError> {
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(summary).expect("json") + "\n")?;
    Ok(())
}

fn flow_sidecars(ckpt: &Path) -> Result<(FlowInfo, GaussianEncoder), CliError> {
    let dir = ckpt.parent().unwrap_or(Path::new("."));
    let info_path = dir.join(FLOW_INFO);
    let text = std::fs::read_to_string(&info_path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", info_path.display())))?;
    let info: FlowInfo =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid {}: {e}", info_path.display())))?;
    let enc_path = dir.join("encoder.ckpt");
    if !enc_path.is_file() {
        return Err(CliError::Usage(format!("missing {}", enc_path.display())));
    }
    let encoder = GaussianEncoder::from_checkpoint(&Checkpoint::load(enc_path)?)?;
    Ok((info, encoder))
}

/// `q,p,dq,dp` rows.
fn write_field(path: &Path, points: &[[f64; 2]], disp: &[[f64; 2]]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "q,p,dq,dp")?;
    for (x, d) in points.iter().zip(disp) {
        writeln!(w, "{},{},{:e},{:e}", x[0], x[1], d[0], d[1])?;
    }
    w.flush()?;
    Ok(())
}

/// `kinetic.csv` (`p,kinetic`), `potential.csv` (`q,potential`) and the
/// phase-plane energy grid of a one-dimensional model.
fn write_energy_curves(out: &Path, model: &SeparableHamiltonianModel, grid: &Grid2d) -> Result<(), CliError> {
    let mut kw = BufWriter::new(File::create(out.join("kinetic.csv"))?);
    let mut vw = BufWriter::new(File::create(out.join("potential.csv"))?);
    writeln!(kw, "p,kinetic")?;
    writeln!(vw, "q,potential")?;
    for i in 0..grid.nx {
        let x = grid.point(i)[0];
        writeln!(kw, "{x},{:e}", model.kinetic().eval(&[x])?[0])?;
        writeln!(vw, "{x},{:e}", model.potential().eval(&[x])?[0])?;
    }
    kw.flush()?;
    vw.flush()?;
    let energy: Vec<f64> = grid
        .points()
        .map(|[q, p]| model.energy(&PhaseState::new(vec![q], vec![p])?))
        .collect::<hamflow::error::Result<_>>()?;
    write_grid_csv(out.join("energy.csv"), grid, "energy", &energy)?;
    write_pgm(out.join("energy.pgm"), grid, &energy)?;
    Ok(())
}

fn eval_dynamics(cfg: &EvalConfig, model: SeparableHamiltonianModel, out: &Path) -> Result<(), CliError> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Usage("evaluating a dynamics model needs a dataset (--data)".into()))?;
    if !data.join("manifest.json").is_file() {
        return Err(CliError::Usage(format!("{} is not a dataset directory", data.display())));
    }
    let ds = load_dataset(data)?;
    if ds.manifest.state_dim != 2 * model.dim() {
        return Err(CliError::Usage(format!(
            "model has {} degrees of freedom, the dataset {}",
            model.dim(),
            ds.manifest.state_dim / 2
        )));
    }
    let system = ds.manifest.system.to_string();
    let mut rows = Vec::new();
    for (split, trajs) in [("train", &ds.train.clean), ("test", &ds.test.clean)] {
        let trajs: &[Trajectory] = &trajs[..trajs.len().min(cfg.max_trajectories)];
        if trajs.is_empty() {
            continue;
        }
        let mut reference = 0.0;
        for t in trajs {
            reference += hamiltonian_variance(&model, t)?;
        }
        rows.push(VarianceRow {
            split: split.into(),
            system: system.clone(),
            integrator: "reference".into(),
            variance: reference / trajs.len() as f64,
        });
        for kind in [IntegratorKind::Leapfrog, IntegratorKind::Euler, IntegratorKind::Rk4] {
            let spec = IntegratorSpec::new(kind, ds.manifest.dt, ds.manifest.n_steps);
            let mut v = 0.0;
            for t in trajs {
                v += hamiltonian_variance(&model, &rollout(&model, &t.states()[0], &spec)?)?;
            }
            rows.push(VarianceRow {
                split: split.into(),
                system: system.clone(),
                integrator: kind.name().into(),
                variance: v / trajs.len() as f64,
            });
        }
    }
    write_hvar_csv(out.join("hvar.csv"), &rows)?;
    let test: Vec<Trajectory> = ds.test.clean.iter().take(cfg.max_trajectories).cloned().collect();
    let mut summary = serde_json::json!({ "system": system, "hamiltonian_variance": rows });
    if !test.is_empty() {
        let (series, _) = evaluate_rollouts(&model, &test)?;
        write_mse_csv(out.join("mse.csv"), &series)?;
        summary["test_rollout_mse"] = serde_json::json!(mean_predicted_mse(&series));
        println!("held-out leapfrog rollout mse {:.3e}", mean_predicted_mse(&series));
    }
    if model.dim() == 1 {
        let (lo, hi) = ds.manifest.radius_range;
        let reach = 1.25 * hi.max(lo);
        write_energy_curves(out, &model, &square(cfg, reach, cfg.grid))?;
        let grid = square(cfg, reach, cfg.field_points);
        let pts: Vec<[f64; 2]> = grid.points().collect();
        let disp = pts
            .iter()
            .map(|&[q, p]| {
                let s = PhaseState::new(vec![q], vec![p])?;
                let n = leapfrog_step(&model, &s, ds.manifest.dt)?;
                Ok([n.q()[0] - q, n.p()[0] - p])
            })
            .collect::<hamflow::error::Result<Vec<_>>>()?;
        write_field(&out.join("vector_field.csv"), &pts, &disp)?;
    }
    for r in &rows {
        println!("{:<5} {:<9} var(H) {:.3e}", r.split, r.integrator, r.variance);
    }
    write_summary(out, &summary)
}

fn eval_density<F: DensityFlow>(
    cfg: &EvalConfig,
    flow: &F,
    info: &FlowInfo,
    encoder: &GaussianEncoder,
    out: &Path,
) -> Result<serde_json::Value, CliError> {
    let prior: &PriorSpec = &info.prior;
    let d = flow.data_dim();
    let grid = square(cfg, 4.0, cfg.grid);
    let root = RngStream::new(cfg.seed);
    let mut rng = root.fork(0);
    let samples: Vec<PhaseState> = (0..cfg.n_samples)
        .map(|_| flow.sample(prior, &mut rng))
        .collect::<hamflow::error::Result<_>>()?;
    let (density, kde_points): (Vec<f64>, Vec<[f64; 2]>) = if d == 1 {
        let density = grid
            .points()
            .map(|[q, p]| Ok(flow.log_density(prior, &PhaseState::new(vec![q], vec![p])?)?.exp()))
            .collect::<hamflow::error::Result<Vec<f64>>>()?;
        let pts = samples.iter().map(|s| [s.q()[0], s.p()[0]]).collect();
        let target = info.density.target();
        let mut w = BufWriter::new(File::create(out.join("marginal.csv"))?);
        writeln!(w, "q,model,target")?;
        for i in 0..grid.nx {
            let q = grid.point(i)[0];
            let model = marginal_log_density_1d(flow, prior, q, 10.0, 801)?.exp();
            let t = if target.std() > 0.0 { target.log_density(&[q])?.exp() } else { 0.0 };
            writeln!(w, "{q},{model:e},{t:e}")?;
        }
        w.flush()?;
        (density, pts)
    } else if d == 2 {
        let mut irng = root.fork(1);
        let density = grid
            .points()
            .map(|[x, y]| Ok(importance_log_marginal(flow, prior, encoder, &[x, y], &mut irng, 64)?.exp()))
            .collect::<hamflow::error::Result<Vec<f64>>>()?;
        let pts = samples.iter().map(|s| [s.q()[0], s.q()[1]]).collect();
        (density, pts)
    } else {
        return Err(CliError::Usage(format!("density grids support 1 or 2 data dimensions, not {d}")));
    };
    let mass = grid.integrate(&density);
    // the plotted window can clip the flow's spread in p; integrate wider for the total
    let total_mass = if d == 1 {
        let wide = Grid2d::square(10.0, 400);
        let vals = wide
            .points()
            .map(|[q, p]| Ok(flow.log_density(prior, &PhaseState::new(vec![q], vec![p])?)?.exp()))
            .collect::<hamflow::error::Result<Vec<f64>>>()?;
        Some(wide.integrate(&vals))
    } else {
        None
    };
    write_grid_csv(out.join("density.csv"), &grid, "density", &density)?;
    write_pgm(out.join("density.pgm"), &grid, &density)?;
    let kde = kde_grid(&kde_points, cfg.bandwidth, &grid)?;
    write_kde_csv(out.join("kde.csv"), &grid, &kde)?;
    write_pgm(out.join("kde.pgm"), &grid, &kde)?;
    let test = held_out(info);
    let nll = mean_nll(flow, prior, encoder, &test, &mut root.fork(2))?;
    let mut summary = serde_json::json!({
        "mode": info.mode,
        "density": info.density,
        "grid_mass": mass,
        "total_mass": total_mass,
        "grid": grid,
        "test_nll": nll,
    });
    let target = info.density.target();
    if target.std() > 0.0 {
        summary["target_nll"] = serde_json::json!(target.mean_nll(&test)?);
    }
    println!("grid mass {mass:.4} over {}x{} cells; held-out nll {nll:.4}", grid.nx, grid.ny);
    if let Some(t) = total_mass {
        println!("total mass on [-10, 10]^2: {t:.4}");
    }
    Ok(summary)
}
