//! Reproducible random streams.
//!
//! Every consumer gets its own generator keyed by `(seed, label, index)`, so
//! the events of path 17 do not depend on how many paths run before it, how
//! many threads are used, or whether price normals are drawn at all.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Label of the RFQ/event stream shared by the simulator and the residual estimator.
pub const EVENTS: &str = "events";
/// Label of the price-increment stream.
pub const MARKET: &str = "market";

/// FNV-1a, just to spread labels over the seed space.
fn label_hash(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn stream(seed: u64, label: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ label_hash(label));
    rng.set_stream(index);
    rng
}
