//! Keyed random streams.
//!
//! Every random variate in a run is drawn from a stream addressed by a
//! [`StreamKey`]. The key is packed into the 256-bit key of a ChaCha8 block
//! cipher, so two distinct keys drive unrelated keystreams and replaying a key
//! reproduces its variates bit for bit, whatever order the streams are
//! consumed in and however many threads consume them.
//!
//! Uniforms take the top 53 bits of each 64-bit output. Gaussians use the
//! Box–Muller transform on consecutive uniform pairs, emitting the cosine
//! branch first and the sine branch second.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a stream is used for. Part of the key, so the same
/// `(seed, level, index)` triple can feed several independent consumers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    PathNoise,
    QuantileUniform,
    ObservationNoise,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::PathNoise => 0x7061_7468,
            Purpose::QuantileUniform => 0x7175_616e,
            Purpose::ObservationNoise => 0x6f62_7376,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub experiment_seed: u64,
    pub level: u32,
    pub sample_index: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(experiment_seed: u64, level: u32, sample_index: u64, purpose: Purpose) -> Self {
        Self {
            experiment_seed,
            level,
            sample_index,
            purpose,
        }
    }

    pub fn path(experiment_seed: u64, level: u32, sample_index: u64) -> Self {
        Self::new(experiment_seed, level, sample_index, Purpose::PathNoise)
    }

    fn cipher_key(&self) -> [u8; 32] {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.experiment_seed.to_le_bytes());
        key[8..16].copy_from_slice(&u64::from(self.level).to_le_bytes());
        key[16..24].copy_from_slice(&self.sample_index.to_le_bytes());
        key[24..32].copy_from_slice(&self.purpose.tag().to_le_bytes());
        key
    }

    pub fn stream(&self) -> Stream {
        Stream::new(*self)
    }
}

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

/// A positioned reader over the keystream of one [`StreamKey`].
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Stream {
    pub fn new(key: StreamKey) -> Self {
        Self {
            rng: ChaCha8Rng::from_seed(key.cipher_key()),
            spare: None,
        }
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(radius * theta.sin());
        radius * theta.cos()
    }

    /// A Brownian increment `N(0, sqrt_step^2)`.
    #[inline]
    pub fn increment(&mut self, sqrt_step: f64) -> f64 {
        sqrt_step * self.standard_normal()
    }
}

pub fn uniform(key: StreamKey, count: usize) -> Vec<f64> {
    let mut stream = key.stream();
    (0..count).map(|_| stream.uniform()).collect()
}

/// `count` i.i.d. `N(0, step)` variates.
pub fn gaussian_increments(key: StreamKey, count: usize, step: f64) -> Result<Vec<f64>> {
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::InvalidStep(step));
    }
    let mut stream = key.stream();
    let scale = step.sqrt();
    Ok((0..count).map(|_| stream.increment(scale)).collect())
}
