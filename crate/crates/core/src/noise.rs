//! Seeded complex Wiener increments.
//!
//! Every trajectory owns a ChaCha8 stream selected by `(base_seed,
//! trajectory)`; each step consumes a fixed number of words, so the
//! increments of step `n` are addressable without replaying earlier steps.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stream namespaces so that auxiliary draws never overlap the noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Noise = 0,
    SampleTimes = 1,
    Phases = 2,
    Bootstrap = 3,
    Synthetic = 4,
}

/// RNG for `(seed, domain, index)`.
pub fn stream_rng(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 48) | (index & ((1 << 48) - 1)));
    rng
}

/// Uniform in `[0, 1)` with 53 random bits.
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard complex Gaussian with independent `N(0, 1)` real and imaginary
/// parts (Box–Muller, exactly two words of 64 bits).
pub fn complex_normal<R: RngCore + ?Sized>(rng: &mut R) -> Complex64 {
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    Complex64::from_polar((-2.0 * u1.ln()).sqrt(), TAU * u2)
}

/// Increments `Δβ_j = β_j(τ+h) − β_j(τ) + i(β_{−j}(τ+h) − β_{−j}(τ))` for
/// `j = 1..n_noise`, each real component of variance `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub base_seed: u64,
    pub trajectory: u64,
    pub n_noise: usize,
    /// Step size of the finest level.
    pub h: f64,
    /// Number of consecutive fine increments summed per step.
    #[serde(default = "one")]
    pub coarsening: usize,
}

fn one() -> usize {
    1
}

impl NoisePlan {
    pub fn new(base_seed: u64, trajectory: u64, n_noise: usize, h: f64) -> Self {
        Self { base_seed, trajectory, n_noise, h, coarsening: 1 }
    }

    /// Same Brownian path sampled on a grid `factor` times coarser.
    pub fn coarsened(&self, factor: usize) -> Self {
        Self { coarsening: self.coarsening * factor.max(1), ..self.clone() }
    }

    /// Step size seen by the integrator.
    pub fn step_size(&self) -> f64 {
        self.h * self.coarsening as f64
    }

    fn words_per_fine_step(&self) -> u128 {
        // two u64 draws per complex increment, two 32-bit words each
        4 * self.n_noise as u128
    }

    pub fn stream(&self) -> NoiseStream {
        NoiseStream { plan: self.clone(), rng: stream_rng(self.base_seed, Domain::Noise, self.trajectory) }
    }

    /// Increments of step `step` (at the coarsened level).
    pub fn increments(&self, step: u64, out: &mut [Complex64]) {
        let mut stream = self.stream();
        stream.seek(step);
        stream.fill(out);
    }
}

/// Sequential reader over a [`NoisePlan`].
pub struct NoiseStream {
    plan: NoisePlan,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn seek(&mut self, step: u64) {
        let fine = step as u128 * self.plan.coarsening as u128;
        self.rng.set_word_pos(fine * self.plan.words_per_fine_step());
    }

    /// Writes the next step's increments into `out[..n_noise]`.
    pub fn fill(&mut self, out: &mut [Complex64]) {
        let n = self.plan.n_noise;
        let scale = self.plan.h.sqrt();
        out[..n].iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for _ in 0..self.plan.coarsening {
            for z in out[..n].iter_mut() {
                *z += complex_normal(&mut self.rng) * scale;
            }
        }
    }
}
