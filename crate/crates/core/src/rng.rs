//! Counter-based Gaussian increments.
//!
//! Every draw is a pure function of `(seed, domain, species, particle,
//! step)`: a ChaCha8 key derived from the seed and domain, the stream set to
//! `(species, particle)` and the block counter set from the step. Draws are
//! therefore independent of thread scheduling, and the particle system and
//! its mean-field copies can share exactly the same Brownian increments.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Domain tag for the initial positions.
pub const DOMAIN_INITIAL: u64 = 0x1;
/// Domain tag for the Brownian increments.
pub const DOMAIN_BROWNIAN: u64 = 0x2;

/// 64-bit finalizer used to derive sub-seeds (splitmix64).
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep` of an experiment unit `unit` (e.g. a particle
/// count) under master seed `seed`.
pub fn replica_seed(seed: u64, unit: u64, rep: u64) -> u64 {
    mix64(mix64(seed ^ mix64(unit)) ^ rep)
}

/// Random stream of one particle within one domain.
pub fn particle_stream(seed: u64, domain: u64, species: usize, particle: usize) -> ParticleStream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&mix64(seed ^ domain).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(((species as u64) << 40) | particle as u64);
    ParticleStream { rng, spare: None }
}

/// Standard normal draws from one particle stream (Box-Muller).
pub struct ParticleStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl ParticleStream {
    /// Positions the stream at the start of `block` (64-byte ChaCha blocks).
    pub fn seek_block(&mut self, block: u64) {
        self.rng.set_word_pos(block as u128 * 16);
        self.spare = None;
    }

    /// Uniform on `(0, 1]`.
    pub fn uniform_open0(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open0();
        let u2 = self.uniform_open0();
        let radius = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        self.spare = Some(radius * sin);
        radius * cos
    }
}

/// ChaCha blocks consumed by one step of a `d`-dimensional increment.
fn blocks_per_step(d: usize) -> u64 {
    // each Box-Muller pair uses two u64 = 16 bytes
    let pairs = d.div_ceil(2) as u64;
    (pairs * 16).div_ceil(64)
}

/// Brownian increment `sqrt(2 sigma dt) * Z` of particle `(species, i)` at
/// `step`, written into `out` (length `d`).
pub fn brownian_increment(
    seed: u64,
    species: usize,
    particle: usize,
    step: u64,
    scale: f64,
    out: &mut [f64],
) {
    let mut stream = particle_stream(seed, DOMAIN_BROWNIAN, species, particle);
    stream.seek_block(step * blocks_per_step(out.len()));
    for o in out.iter_mut() {
        *o = scale * stream.normal();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increments_are_pure_functions_of_their_key() {
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        brownian_increment(7, 1, 42, 5, 1.0, &mut a);
        brownian_increment(7, 0, 0, 0, 1.0, &mut b);
        brownian_increment(7, 1, 42, 5, 1.0, &mut b);
        assert_eq!(a, b);
        let mut c = [0.0; 3];
        brownian_increment(7, 1, 42, 6, 1.0, &mut c);
        assert_ne!(a, c);
        brownian_increment(7, 1, 43, 5, 1.0, &mut c);
        assert_ne!(a, c);
        brownian_increment(8, 1, 42, 5, 1.0, &mut c);
        assert_ne!(a, c);
    }

    #[test]
    fn increments_have_unit_variance_and_no_lag_correlation() {
        let n = 40_000u64;
        let (mut sum, mut sq, mut lag) = (0.0, 0.0, 0.0);
        let mut prev = 0.0;
        for step in 0..n {
            let mut z = [0.0; 3];
            brownian_increment(3, 0, 9, step, 1.0, &mut z);
            sum += z[0];
            sq += z[0] * z[0];
            lag += z[0] * prev;
            prev = z[2];
        }
        let nf = n as f64;
        assert!((sum / nf).abs() < 0.02);
        assert!((sq / nf - 1.0).abs() < 0.03);
        assert!((lag / nf).abs() < 0.02);
    }

    #[test]
    fn block_budget_covers_dimension() {
        assert_eq!(blocks_per_step(3), 1);
        assert_eq!(blocks_per_step(8), 1);
        assert_eq!(blocks_per_step(9), 2);
    }
}
