//! Counter-addressed random streams.
//!
//! Every draw is a pure function of `(seed, stream, index)`. The generator is
//! ChaCha8 with the stream id mapped onto ChaCha's stream word and the draw
//! index onto its word position, so any draw can be reproduced without
//! replaying the ones before it.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    cursor: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            cursor: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Index of the next draw.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn set_cursor(&mut self, cursor: u64) {
        self.cursor = cursor;
    }

    /// A new stream with the same seed and a stream id mixed from `parts`.
    pub fn derive(&self, parts: &[u64]) -> RngStream {
        let mut h = splitmix(self.stream ^ 0xA076_1D64_78BD_642F);
        for &p in parts {
            h = splitmix(h ^ p.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        }
        RngStream::new(self.seed, h)
    }

    fn generator_at(&self, index: u64) -> ChaCha8Rng {
        let mut g = ChaCha8Rng::seed_from_u64(self.seed);
        g.set_stream(self.stream);
        // One u64 draw consumes two 32-bit words.
        g.set_word_pos(u128::from(index) * 2);
        g
    }

    /// The raw 64-bit draw at `index`, independent of the cursor.
    pub fn u64_at(&self, index: u64) -> u64 {
        self.generator_at(index).next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform_at(&self, index: u64) -> f64 {
        to_unit(self.u64_at(index))
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = self.u64_at(self.cursor);
        self.cursor += 1;
        v
    }

    pub fn next_uniform(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Fills `out` with consecutive uniforms starting at the cursor and advances it.
    pub fn fill_uniform(&mut self, out: &mut [f64]) {
        let mut g = self.generator_at(self.cursor);
        for v in out.iter_mut() {
            *v = to_unit(g.next_u64());
        }
        self.cursor += out.len() as u64;
    }

    /// A seeded `rand` generator positioned at the cursor, for use with `rand_distr`.
    /// Advances the cursor by `reserve` draws so later draws do not overlap.
    pub fn generator(&mut self, reserve: u64) -> ChaCha8Rng {
        let g = self.generator_at(self.cursor);
        self.cursor += reserve;
        g
    }
}

#[inline]
fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// SplitMix64 finalizer.
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
