//! Seeded per-path random streams.
//!
//! Every random draw is keyed by `(seed, domain, index)` so a sample's value
//! does not depend on which worker computes it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent uses of randomness for the same path index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Path,
    KbTime,
    Haar,
    Extension,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Path => 0x5041_5448_0000_0001,
            Domain::KbTime => 0x4b42_5449_0000_0002,
            Domain::Haar => 0x4841_4152_0000_0003,
            Domain::Extension => 0x4558_544e_0000_0004,
        }
    }
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.tag());
    rng.set_stream(index);
    rng
}
