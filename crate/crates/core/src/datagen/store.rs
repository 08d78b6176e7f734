use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::{IntegratorId, PhaseState, Trajectory};
use crate::rng::RngStream;
use crate::systems::{System, SystemParams};

use super::render::{body_positions, render_frame, write_ppm, RenderSpec};
use super::{generate_one, DatasetSpec, GeneratedTrajectory, REFERENCE_SUBSTEPS};

pub const FORMAT_VERSION: u32 = 1;
const INCOMPLETE: &str = ".incomplete";
const RENDER_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub test: usize,
}

/// `manifest.json`. State files hold little-endian `f64`, trajectory-major,
/// then state-major, each state stored as `[q..., p...]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub generator: String,
    /// Seconds since the Unix epoch; the only field that differs between
    /// regenerations.
    pub created_unix: u64,
    pub system: System,
    pub params: SystemParams,
    pub counts: Counts,
    pub n_steps: usize,
    pub dt: f64,
    pub noise_std: f64,
    pub image_size: usize,
    pub channels: usize,
    pub radius_range: (f64, f64),
    pub seed: u64,
    pub reference_substeps: usize,
    /// Coordinates per stored state (`2n`).
    pub state_dim: usize,
    pub frames: bool,
    pub render: Option<RenderSpec>,
    pub clipped_bodies: usize,
    pub resampled_initial_states: usize,
}

impl Manifest {
    pub fn count(&self, split: &str) -> usize {
        if split == "train" {
            self.counts.train
        } else {
            self.counts.test
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub clean: Vec<Trajectory>,
    pub noisy: Vec<Trajectory>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Split,
    pub test: Split,
}

fn split_stream(seed: u64, split: &str) -> RngStream {
    RngStream::new(seed).fork(if split == "train" { 0 } else { 1 })
}

fn write_states(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for t in trajs {
        for s in t.states() {
            for v in s.q().iter().chain(s.p()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_states(path: &Path, n_traj: usize, n_states: usize, dim: usize, dt: f64) -> Result<Vec<Trajectory>> {
    let bytes = fs::read(path)?;
    let expected = n_traj * n_states * 2 * dim * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{} holds {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    values
        .chunks(n_states * 2 * dim)
        .map(|traj| {
            let states = traj
                .chunks(2 * dim)
                .map(|s| PhaseState::new(s[..dim].to_vec(), s[dim..].to_vec()))
                .collect::<Result<Vec<_>>>()?;
            Trajectory::new(states, dt, IntegratorId::Reference)
        })
        .collect()
}

fn generate_split(spec: &DatasetSpec, split: &str, n: usize) -> Result<Vec<GeneratedTrajectory>> {
    let stream = split_stream(spec.seed, split);
    (0..n).into_par_iter().map(|i| generate_one(spec, &stream, i)).collect()
}

fn render_split(dir: &Path, params: &SystemParams, render: &RenderSpec, trajs: &[Trajectory]) -> Result<usize> {
    let mut clipped = 0;
    for (c, chunk) in trajs.chunks(RENDER_CHUNK).enumerate() {
        let frames = chunk
            .par_iter()
            .map(|t| {
                t.states()
                    .iter()
                    .map(|s| render_frame(render, &body_positions(params, s.q())))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (k, traj_frames) in frames.iter().enumerate() {
            let tdir = dir.join(format!("traj{:06}", c * RENDER_CHUNK + k));
            fs::create_dir_all(&tdir)?;
            for (t, f) in traj_frames.iter().enumerate() {
                clipped += f.clipped;
                write_ppm(tdir.join(format!("step{t:03}.ppm")), f)?;
            }
        }
    }
    Ok(clipped)
}

/// Generates both splits and writes them under `out_dir`. A `.incomplete`
/// marker is present until every file has been written.
pub fn write_dataset(spec: &DatasetSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let out = out_dir.as_ref();
    fs::create_dir_all(out)?;
    let marker = out.join(INCOMPLETE);
    fs::write(&marker, b"")?;
    let params = spec.resolved_params();
    let render = spec.render.then(|| RenderSpec::for_system(spec.system, spec.image_size));
    let mut clipped = 0;
    let mut resampled = 0;
    for (split, n) in [("train", spec.n_train), ("test", spec.n_test)] {
        let generated = generate_split(spec, split, n)?;
        resampled += generated.iter().map(|g| g.resamples).sum::<usize>();
        let (clean, noisy): (Vec<_>, Vec<_>) = generated.into_iter().map(|g| (g.clean, g.noisy)).unzip();
        let dir = out.join(split);
        fs::create_dir_all(&dir)?;
        write_states(&dir.join("states_clean.f64"), &clean)?;
        write_states(&dir.join("states_noisy.f64"), &noisy)?;
        if let Some(r) = &render {
            clipped += render_split(&dir.join("frames"), &params, r, &noisy)?;
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        generator: format!("hamflow {}", env!("CARGO_PKG_VERSION")),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        system: spec.system,
        params,
        counts: Counts {
            train: spec.n_train,
            test: spec.n_test,
        },
        n_steps: spec.n_steps,
        dt: spec.dt,
        noise_std: spec.resolved_noise_std(),
        image_size: spec.image_size,
        channels: spec.channels,
        radius_range: spec.resolved_radius_range(),
        seed: spec.seed,
        reference_substeps: REFERENCE_SUBSTEPS,
        state_dim: 2 * spec.system.dim(),
        frames: spec.render,
        render,
        clipped_bodies: clipped,
        resampled_initial_states: resampled,
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    fs::remove_file(&marker)?;
    Ok(manifest)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    if dir.join(INCOMPLETE).exists() {
        return Err(Error::Format(format!("{} is an incomplete dataset", dir.display())));
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported dataset format {}", manifest.format_version)));
    }
    let dim = manifest.state_dim / 2;
    let load = |split: &str| -> Result<Split> {
        let path = |name: &str| -> PathBuf { dir.join(split).join(name) };
        let n = manifest.count(split);
        Ok(Split {
            clean: read_states(&path("states_clean.f64"), n, manifest.n_steps + 1, dim, manifest.dt)?,
            noisy: read_states(&path("states_noisy.f64"), n, manifest.n_steps + 1, dim, manifest.dt)?,
        })
    };
    Ok(Dataset {
        train: load("train")?,
        test: load("test")?,
        manifest,
    })
}
