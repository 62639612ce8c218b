//! Reproducible random-number streams.
//!
//! All Monte Carlo code draws from ChaCha8, a counter-based stream cipher
//! generator: a master seed fixes the key and every logical unit of work
//! (replication, pilot bucket, battery) gets its own 64-bit stream id.
//! Results are therefore independent of thread count and merge order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream-id domains. The high byte separates purposes so replication
/// indices can never collide with pilot buckets or auxiliary draws.
#[derive(Clone, Copy, Debug)]
pub enum StreamDomain {
    Replication = 1,
    Pilot = 2,
    Battery = 3,
}

/// RNG for one replication of an ensemble.
pub fn replication_rng(master_seed: u64, replication: u64) -> ChaCha8Rng {
    stream_rng(master_seed, StreamDomain::Replication, replication)
}

/// RNG for one (parameter, bucket) pilot sample; deterministic no matter
/// which worker thread builds the cache entry first.
pub fn pilot_rng(master_seed: u64, bucket: u64) -> ChaCha8Rng {
    stream_rng(master_seed, StreamDomain::Pilot, bucket)
}

/// RNG for a named verification battery.
pub fn battery_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    stream_rng(master_seed, StreamDomain::Battery, index)
}

pub fn stream_rng(master_seed: u64, domain: StreamDomain, index: u64) -> ChaCha8Rng {
    assert!(index < 1 << 56, "stream index too large");
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((domain as u64) << 56) | index);
    rng
}

/// Uniform draw on the open interval (0, 1); the closed endpoints would
/// break inverse transforms of unbounded laws.
pub fn uniform_open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}
