//! Seeded, counter-addressable random streams.
//!
//! Every consumer draws from its own ChaCha8 stream derived from the run
//! seed, so changing how many batches a run samples never perturbs the
//! dataset or the initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const RNG_NAME: &str = "chacha8";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Teacher = 1,
    Inputs = 2,
    LabelNoise = 3,
    Init = 4,
    Batches = 5,
    Aux = 6,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
