//! Counter-based random streams.
//!
//! A stream is a pure function of `(seed, stream_id, counter)`: the ChaCha8
//! key comes from the seed, the ChaCha stream number from `stream_id`, and
//! the block position from `counter`. Trials address disjoint windows of
//! [`WORDS_PER_TRIAL`] 32-bit words, so a trial's draws do not depend on
//! which worker runs it or in what order.

use std::f64::consts::TAU;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Size of the per-trial window in 32-bit words (128 `u64` draws).
pub const WORDS_PER_TRIAL: u128 = 256;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    start: u128,
    rng: ChaCha8Rng,
}

impl RngStream {
    /// A stream positioned at word `counter`.
    pub fn new(seed: u64, stream_id: u64, counter: u128) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        rng.set_word_pos(counter);
        Self {
            seed,
            stream_id,
            start: counter,
            rng,
        }
    }

    /// The window reserved for `trial_id`.
    pub fn for_trial(seed: u64, stream_id: u64, trial_id: u64) -> Self {
        Self::new(seed, stream_id, trial_id as u128 * WORDS_PER_TRIAL)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Current word position.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Words consumed since construction.
    pub fn consumed(&self) -> u128 {
        self.counter() - self.start
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[0, 2π)`.
    pub fn phase(&mut self) -> f64 {
        let phase = TAU * self.uniform();
        if phase >= TAU {
            0.0
        } else {
            phase
        }
    }
}
