//! Binary checkpoint container.
//!
//! Layout (all integers `u32` little-endian, all reals `f64` little-endian):
//!
//! ```text
//! magic "HFCK" | version | kind_len | kind (utf-8)
//! n_scalars | scalars...
//! n_networks | per network:
//!     n_layers | sizes[n_layers + 1] | activation codes (u8 × n_layers)
//!     per layer: weights (row-major), then bias
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::mlp::{Activation, Layer, MlpParameters};

pub const MAGIC: &[u8; 4] = b"HFCK";
pub const FORMAT_VERSION: u32 = 1;

/// A tagged bundle of networks and extra scalars (e.g. a learnable step size).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub scalars: Vec<f64>,
    pub networks: Vec<MlpParameters>,
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

// Guards against absurd allocations from a corrupt header.
const MAX_COUNT: u32 = 1 << 26;

fn bounded(v: u32, what: &str) -> Result<usize> {
    if v > MAX_COUNT {
        Err(Error::Format(format!("implausible {what} count {v}")))
    } else {
        Ok(v as usize)
    }
}

impl Checkpoint {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(&mut w, FORMAT_VERSION)?;
        put_u32(&mut w, self.kind.len() as u32)?;
        w.write_all(self.kind.as_bytes())?;
        put_u32(&mut w, self.scalars.len() as u32)?;
        put_f64s(&mut w, &self.scalars)?;
        put_u32(&mut w, self.networks.len() as u32)?;
        for net in &self.networks {
            let sizes = net.sizes();
            put_u32(&mut w, net.layers().len() as u32)?;
            for s in sizes {
                put_u32(&mut w, s as u32)?;
            }
            let codes: Vec<u8> = net.layers().iter().map(|l| l.activation.code()).collect();
            w.write_all(&codes)?;
            for l in net.layers() {
                put_f64s(&mut w, &l.weight)?;
                put_f64s(&mut w, &l.bias)?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = get_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let kind_len = bounded(get_u32(&mut r)?, "kind length")?;
        let mut kind = vec![0u8; kind_len];
        r.read_exact(&mut kind)?;
        let kind = String::from_utf8(kind).map_err(|_| Error::Format("kind is not utf-8".into()))?;
        let n_scalars = bounded(get_u32(&mut r)?, "scalar")?;
        let scalars = get_f64s(&mut r, n_scalars)?;
        let n_nets = bounded(get_u32(&mut r)?, "network")?;
        let mut networks = Vec::with_capacity(n_nets);
        for _ in 0..n_nets {
            let n_layers = bounded(get_u32(&mut r)?, "layer")?;
            let sizes = (0..=n_layers)
                .map(|_| get_u32(&mut r).and_then(|v| bounded(v, "layer size")))
                .collect::<Result<Vec<_>>>()?;
            let mut codes = vec![0u8; n_layers];
            r.read_exact(&mut codes)?;
            let mut layers = Vec::with_capacity(n_layers);
            for i in 0..n_layers {
                let (inputs, outputs) = (sizes[i], sizes[i + 1]);
                let weight = get_f64s(&mut r, inputs * outputs)?;
                let bias = get_f64s(&mut r, outputs)?;
                layers.push(Layer {
                    inputs,
                    outputs,
                    weight,
                    bias,
                    activation: Activation::from_code(codes[i])?,
                });
            }
            networks.push(MlpParameters::from_layers(layers)?);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            kind,
            scalars,
            networks,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Fails unless the checkpoint's kind is `kind`.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "checkpoint holds a '{}' model, expected '{kind}'",
                self.kind
            )))
        }
    }
}
