//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit stream. Parallel work derives one
//! independent substream per work item from a master seed, so results depend
//! only on `(master_seed, purpose, index)` and never on the worker count:
//!
//! ```text
//! substream(seed, purpose, index) = ChaCha8(seed_from_u64(seed)), stream = purpose << 40 | index
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Tags separating the substream families drawn from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Dataset = 1,
    Chain = 2,
    Likelihood = 3,
    Design = 4,
    TrainingPoint = 5,
    HyperFit = 6,
    Validation = 7,
    ValidationPoint = 8,
    Replicate = 9,
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, purpose: Purpose, index: u64) -> Stream {
    assert!(index < (1 << 40), "substream index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) | index);
    rng
}
