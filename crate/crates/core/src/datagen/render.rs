use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffgraph::sigmoid;
use crate::error::{Error, Result};
use crate::systems::{System, SystemParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub size: usize,
    /// Disc radius in pixels.
    pub radius_px: f64,
    /// Width of the soft edge in pixels.
    pub blur_px: f64,
    /// One colour per body, cycled if there are more bodies.
    pub colors: Vec<[u8; 3]>,
    /// Pixels per world unit.
    pub scale: f64,
    /// Pixel coordinates of the world origin.
    pub offset: [f64; 2],
}

impl RenderSpec {
    /// Square frame showing `[-extent, extent]²` of world space.
    pub fn square(size: usize, extent: f64) -> Self {
        let s = size as f64;
        Self {
            size,
            radius_px: s / 16.0,
            blur_px: s / 64.0,
            colors: vec![[230, 80, 60], [70, 160, 230], [240, 200, 70]],
            scale: s / (2.0 * extent),
            offset: [s / 2.0, s / 2.0],
        }
    }

    pub fn for_system(system: System, size: usize) -> Self {
        let extent = match system {
            System::MassSpring => 1.6,
            System::Pendulum => 1.5,
            System::TwoBody | System::ThreeBody => 2.0,
        };
        Self::square(size, extent)
    }

    /// Continuous pixel coordinates of a world point; `y` points up.
    pub fn to_pixel(&self, p: [f64; 2]) -> [f64; 2] {
        [self.offset[0] + p[0] * self.scale, self.offset[1] - p[1] * self.scale]
    }
}

/// World-space body centres for a configuration `q`: the mass-spring body
/// moves horizontally, the pendulum bob hangs from the origin, and n-body
/// positions are used as they are.
pub fn body_positions(params: &SystemParams, q: &[f64]) -> Vec<[f64; 2]> {
    match params {
        SystemParams::MassSpring(_) => vec![[q[0], 0.0]],
        SystemParams::Pendulum(p) => vec![[p.l * q[0].sin(), -p.l * q[0].cos()]],
        SystemParams::NBody(_) => q.chunks(2).map(|c| [c[0], c[1]]).collect(),
    }
}

/// An RGB image, row-major from the top-left corner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
    /// Bodies whose disc reaches past the frame border.
    pub clipped: usize,
}

impl Frame {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Draws each body as a disc with a sigmoid edge, added onto black.
pub fn render_frame(spec: &RenderSpec, positions: &[[f64; 2]]) -> Result<Frame> {
    if positions.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("body position".into()));
    }
    if spec.colors.is_empty() || !(spec.radius_px > 0.0 && spec.blur_px > 0.0) {
        return Err(Error::invalid("render spec needs colours, a radius and a blur width"));
    }
    let n = spec.size;
    let mut acc = vec![0.0f64; 3 * n * n];
    let mut clipped = 0;
    let reach = spec.radius_px + 12.0 * spec.blur_px;
    for (b, &pos) in positions.iter().enumerate() {
        let [cx, cy] = spec.to_pixel(pos);
        let inside = |c: f64| c - spec.radius_px >= 0.0 && c + spec.radius_px <= n as f64;
        if !(inside(cx) && inside(cy)) {
            clipped += 1;
        }
        let color = spec.colors[b % spec.colors.len()];
        let lo = |c: f64| ((c - reach).floor().max(0.0) as usize).min(n);
        let hi = |c: f64| ((c + reach).ceil().max(0.0) as usize).min(n);
        for y in lo(cy)..hi(cy) {
            for x in lo(cx)..hi(cx) {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                let w = sigmoid((spec.radius_px - d) / spec.blur_px);
                let i = 3 * (y * n + x);
                for c in 0..3 {
                    acc[i + c] += w * color[c] as f64;
                }
            }
        }
    }
    Ok(Frame {
        width: n,
        height: n,
        data: acc.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect(),
        clipped,
    })
}

/// Binary PPM (P6).
pub fn write_ppm(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", frame.width, frame.height)?;
    w.write_all(&frame.data)?;
    w.flush()?;
    Ok(())
}
