//! Keyed random streams.
//!
//! Every random draw in a run comes from a ChaCha8 stream whose 256-bit seed
//! is the literal concatenation of `(run_seed, role, endpoint, round)`. Two
//! streams with the same key produce the same draws regardless of which
//! thread evaluates them or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which part of the protocol a stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamRole {
    /// Worker-side (uplink) gradient compressor.
    Dual,
    /// Server-side (downlink) model compressor.
    Primal,
    /// Minibatch sampling for stochastic gradients.
    Sample,
    /// Problem / initial point generation.
    Setup,
    /// Diagnostics that must not perturb the algorithmic streams.
    Audit,
}

impl StreamRole {
    fn tag(self) -> u64 {
        match self {
            StreamRole::Dual => 0x6475_616c,
            StreamRole::Primal => 0x7072_696d,
            StreamRole::Sample => 0x7361_6d70,
            StreamRole::Setup => 0x7365_7475,
            StreamRole::Audit => 0x6175_6469,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub run_seed: u64,
    pub role: StreamRole,
    pub endpoint: u64,
    pub round: u64,
}

impl StreamKey {
    pub fn new(run_seed: u64, role: StreamRole, endpoint: usize, round: usize) -> Self {
        Self {
            run_seed,
            role,
            endpoint: endpoint as u64,
            round: round as u64,
        }
    }

    pub fn seed_bytes(&self) -> [u8; 32] {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.run_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&self.role.tag().to_le_bytes());
        seed[16..24].copy_from_slice(&self.endpoint.to_le_bytes());
        seed[24..32].copy_from_slice(&self.round.to_le_bytes());
        seed
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.seed_bytes())
    }
}
