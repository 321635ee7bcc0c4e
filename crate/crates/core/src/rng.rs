//! Named random sub-streams derived from a single run seed.
//!
//! Each consumer (GPS, LiDAR, augmentation, split, ...) draws from its own
//! ChaCha stream so enabling one consumer never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const GPS: &str = "gps";
pub const LIDAR: &str = "lidar";
pub const AUGMENT: &str = "augment";
pub const SPLIT: &str = "split";
pub const OBSTACLES: &str = "obstacles";

/// FNV-1a over the stream name; stable across platforms and releases.
fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn substream(seed: u64, name: &str) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}
