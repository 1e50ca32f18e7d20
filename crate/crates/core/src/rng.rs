//! Named random streams derived from one root seed.
//!
//! A stream's 32-byte ChaCha8 key is `SHA-256(seed_le || 0x00 || label || 0x00 || robot_le)`,
//! where `robot` is `u32::MAX` for streams that are not robot-specific. Each consumer owns its
//! stream, so adding draws in one subsystem never shifts another subsystem's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::geometry::RobotId;

pub type SimRng = ChaCha8Rng;

/// The five stream families used by a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Channel,
    Planner,
    AppTiebreak,
    Disturbance,
    SensorNoise,
}

impl Stream {
    pub fn label(self) -> &'static str {
        match self {
            Stream::Channel => "channel",
            Stream::Planner => "planner",
            Stream::AppTiebreak => "app-tiebreak",
            Stream::Disturbance => "disturbance",
            Stream::SensorNoise => "sensor-noise",
        }
    }
}

pub fn derive_stream(seed: u64, stream: Stream, robot: Option<RobotId>) -> SimRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([0u8]);
    h.update(stream.label().as_bytes());
    h.update([0u8]);
    h.update(robot.map_or(u32::MAX, |r| r.0).to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
