//! Named, independent PRNG streams.
//!
//! Every subsystem draws from its own stream, derived from the master seed,
//! a stream tag and an index (episode or evaluation run). Changing how one
//! subsystem consumes randomness never perturbs another, so two controllers
//! evaluated on the same seed see identical traffic, mobility and fading.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Placement,
    Mobility,
    Traffic,
    Fading,
    Agent,
    Init,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Placement => 0x706c_6163,
            Stream::Mobility => 0x6d6f_6269,
            Stream::Traffic => 0x7472_6166,
            Stream::Fading => 0x6661_6469,
            Stream::Agent => 0x6167_656e,
            Stream::Init => 0x696e_6974,
        }
    }
}

/// Whether a world is built for training or for held-out evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, phase: Phase, stream: Stream, index: u64) -> u64 {
    let phase_tag = match phase {
        Phase::Train => 0x7472_6169_6e00_0000,
        Phase::Eval => 0x6576_616c_0000_0000,
    };
    let mut s = splitmix64(master);
    s = splitmix64(s ^ phase_tag);
    s = splitmix64(s ^ stream.tag());
    splitmix64(s ^ index)
}

pub fn stream(master: u64, phase: Phase, stream: Stream, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, phase, stream, index))
}
