//! Seeded excitation and noise sources.
//!
//! All randomness flows through ChaCha20 (a fixed, documented stream cipher
//! generator) and a hand-written Box–Muller transform, so a seed reproduces the
//! same samples on every platform and every build.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Gaussian sample source. Each `(seed, stream)` pair is an independent
/// sequence; streams are used to give each output channel its own noise.
pub struct GaussianSource {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    /// Uniform sample in [0, 1) with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal sample.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn white_noise(&mut self, length: usize, variance: f64) -> Vec<f64> {
        let sd = variance.sqrt();
        (0..length).map(|_| sd * self.standard_normal()).collect()
    }
}

/// Pseudo-random binary sequence: each level is held for `hold` samples and
/// is `±amplitude` with equal probability.
pub fn prbs(length: usize, hold: usize, amplitude: f64, seed: u64, stream: u64) -> Vec<f64> {
    let hold = hold.max(1);
    let mut src = GaussianSource::new(seed, stream);
    let mut out = Vec::with_capacity(length);
    let mut level = amplitude;
    for k in 0..length {
        if k % hold == 0 {
            level = if src.rng.next_u32() & 1 == 0 {
                amplitude
            } else {
                -amplitude
            };
        }
        out.push(level);
    }
    out
}

/// Engineering range of a signal, used to normalize weights and indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalRange {
    pub min: f64,
    pub max: f64,
}

impl SignalRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        let r = Self { min, max };
        r.validate("range")?;
        Ok(r)
    }

    /// `[−half_width, half_width]`.
    pub fn symmetric(half_width: f64) -> Result<Self> {
        Self::new(-half_width, half_width)
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.max <= self.min {
            return Err(Error::invalid(field, format!("need finite min < max, got [{}, {}]", self.min, self.max)));
        }
        Ok(())
    }
}
