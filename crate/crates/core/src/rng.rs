//! Counter-keyed random streams.
//!
//! Every stream is derived from a [`StreamKey`] alone, so a candidate's noise
//! does not depend on how many other candidates ran before it or on which
//! thread produced it.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Init = 1,
    Corpus = 2,
    Pretrain = 3,
    PromptPool = 4,
    PromptSelect = 5,
    Prefix = 6,
    Candidate = 7,
    ForwardNoise = 8,
    Window = 9,
    Eval = 10,
    Theory = 11,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: Purpose,
    pub epoch: u64,
    pub slot: u64,
    pub lane: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            purpose,
            epoch: 0,
            slot: 0,
            lane: 0,
        }
    }

    pub fn epoch(mut self, epoch: u64) -> Self {
        self.epoch = epoch;
        self
    }

    pub fn slot(mut self, slot: u64) -> Self {
        self.slot = slot;
        self
    }

    pub fn lane(mut self, lane: u64) -> Self {
        self.lane = lane;
        self
    }

    pub fn with_purpose(mut self, purpose: Purpose) -> Self {
        self.purpose = purpose;
        self
    }

    fn seed_bytes(&self) -> [u8; 32] {
        let words = [self.seed, self.epoch, (self.slot << 8) | self.purpose as u64, self.lane];
        let mut out = [0u8; 32];
        for (chunk, w) in out.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        out
    }
}

/// A ChaCha8 stream that counts how many noise arrays it has produced.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    draws: u64,
}

impl NoiseStream {
    pub fn new(key: StreamKey) -> Self {
        Self {
            rng: ChaCha8Rng::from_seed(key.seed_bytes()),
            draws: 0,
        }
    }

    /// Number of noise arrays drawn via [`NoiseStream::normal_vec`].
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        self.draws += 1;
        (0..n).map(|_| StandardNormal.sample(&mut self.rng)).collect()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}
