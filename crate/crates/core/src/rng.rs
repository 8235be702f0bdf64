//! Seeded random streams.
//!
//! Every replication, pilot run and Monte Carlo chunk gets its own ChaCha
//! stream: the master seed picks the key and the index picks the stream, so
//! results never depend on which worker thread ran which index.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type ChainRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator keyed by `seed`.
pub fn stream(seed: u64, index: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Deterministic 64-bit seed for replication `index` of a run keyed by `master`.
///
/// The first output of the indexed stream is used so that the derived seed is
/// itself reproducible and can be echoed in reports.
pub fn split_seed(master: u64, index: u64) -> u64 {
    stream(master, index).random()
}

pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
}
