//! Counter-based random streams.
//!
//! An [`RngStream`] is a ChaCha20 keystream addressed by `(seed, stream, counter)`.
//! Work items get their own stream via [`RngStream::fork`], so the draws a
//! trajectory sees depend only on its key and never on thread scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    /// A stream positioned at `counter` 32-bit words into the keystream.
    pub fn at(seed: u64, counter: u64) -> Self {
        let mut s = Self::new(seed);
        s.set_counter(counter);
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.inner.get_word_pos() as u64
    }

    pub fn set_counter(&mut self, counter: u64) {
        self.inner.set_word_pos(counter as u128);
    }

    /// An independent child stream keyed by `key`, starting at counter 0.
    /// The parent is not advanced.
    pub fn fork(&self, key: u64) -> RngStream {
        Self::with_stream(self.seed, mix(self.stream ^ mix(key)))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

/// `dim` i.i.d. draws from `N(mean, std²)`.
pub fn sample_gaussian(rng: &mut RngStream, dim: usize, mean: f64, std: f64) -> Result<Vec<f64>> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::invalid(format!("gaussian std must be >= 0, got {std}")));
    }
    Ok((0..dim).map(|_| mean + std * rng.standard_normal()).collect())
}
