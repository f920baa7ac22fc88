//! Deterministic random streams.
//!
//! A stream is a ChaCha8 generator keyed by the run seed, with the 64-bit
//! ChaCha stream id packed from `(phase, worker, round)`. Distinct triples map
//! to distinct stream ids, so every worker, round and purpose draws from its own
//! sequence and results do not depend on execution order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

/// What a stream is used for. Part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Phase {
    /// Stochastic gradients drawn during the local steps.
    Local = 0,
    /// Randomness of the global sign operator.
    GlobalSign = 1,
    /// One-sample gradient for the per-worker momentum of the majority-vote baseline.
    VoteSample = 2,
    /// Per-worker randomized sign compression of the majority-vote baseline.
    VoteCompress = 3,
    /// Problem construction (structure, data sets).
    Structure = 4,
    /// Monte Carlo estimation of assumption constants.
    Estimation = 5,
    /// Free-standing Monte Carlo checks.
    Check = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub worker: u16,
    pub round: u32,
    pub phase: Phase,
}

impl StreamId {
    /// Injective packing: phase in bits 48..56, worker in 32..48, round in 0..32.
    pub fn packed(&self) -> u64 {
        (u64::from(self.phase as u8) << 48) | (u64::from(self.worker) << 32) | u64::from(self.round)
    }
}

/// A single-owner random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    base_seed: u64,
    id: StreamId,
    inner: ChaCha8Rng,
}

pub fn derive_stream(base_seed: u64, worker: u16, round: u32, phase: Phase) -> RngStream {
    let id = StreamId {
        worker,
        round,
        phase,
    };
    let mut inner = ChaCha8Rng::seed_from_u64(base_seed);
    inner.set_stream(id.packed());
    RngStream {
        base_seed,
        id,
        inner,
    }
}

impl RngStream {
    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
