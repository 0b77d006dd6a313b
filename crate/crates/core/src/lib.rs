//! Open-set active learning with SAM/SGD disagreement scoring.
//!
//! The crate is `no_std` (with `alloc`). It contains a two-layer patch
//! network with analytic gradients, SGD and SAM optimizers, a synthetic
//! typical/atypical patch data generator, the SAMIS-P atypicality score,
//! query strategies, and the round-by-round open-set active learning
//! driver. File IO and the command line live in `samosa-lab`.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod alcore;
pub mod error;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod scoring;
pub mod strategies;
pub mod synthdata;

pub use error::{Error, Result};

/// Deterministic random stream used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Creates the crate RNG from a seed and an independent stream index.
pub fn rng_from(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
