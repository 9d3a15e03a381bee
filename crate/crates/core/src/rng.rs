//! Reproducible, splittable random streams for Monte Carlo work.
//!
//! Every consumer of randomness in this crate draws from a ChaCha stream
//! addressed by a structured 64-bit id:
//!
//! ```text
//! [ purpose : 8 | player : 8 | stage : 24 | path : 24 ]
//! ```
//!
//! Each (purpose, player, stage, path) tuple owns an independent stream of a
//! cipher keyed by the base seed, so the increments for path `p` are the same
//! bytes no matter how paths are chunked across workers or in what order they
//! are generated. Single-worker and multi-worker runs therefore agree
//! bitwise, and any path of any stage can be regenerated in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream's draws are used for. Distinct purposes never share streams,
/// so e.g. growing the training batch cannot perturb validation draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    /// Per-step training increments inside a solver stage.
    Training = 0,
    /// Held-out validation increments.
    Validation = 1,
    /// Convergence probe points.
    Probe = 2,
    /// Forward simulation / cost estimation.
    Evaluation = 3,
    /// Initial-state sampling (box option).
    InitialState = 4,
    /// Network parameter initialization.
    ParamInit = 5,
}

/// Address of one random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub purpose: StreamPurpose,
    /// Player index (0 for player-independent draws).
    pub player: u8,
    /// Solver stage (0 outside staged training). Max 2²⁴−1.
    pub stage: u32,
    /// Path / point / draw index within the stream family. Max 2²⁴−1.
    pub path: u32,
}

impl StreamKey {
    pub fn new(purpose: StreamPurpose, player: usize, stage: usize) -> Self {
        StreamKey {
            purpose,
            player: u8::try_from(player).expect("player index exceeds 255"),
            stage: u32::try_from(stage).expect("stage exceeds u32"),
            path: 0,
        }
    }

    /// The same key re-addressed to a specific path.
    pub fn with_path(self, path: usize) -> Self {
        StreamKey {
            path: u32::try_from(path).expect("path index exceeds u32"),
            ..self
        }
    }

    /// Pack into the 64-bit stream id. Panics if a field exceeds its lane —
    /// a programming error, not an input error.
    pub fn encode(self) -> u64 {
        assert!(self.stage < (1 << 24), "stage {} exceeds 24-bit lane", self.stage);
        assert!(self.path < (1 << 24), "path {} exceeds 24-bit lane", self.path);
        ((self.purpose as u64) << 56)
            | ((self.player as u64) << 48)
            | ((self.stage as u64) << 24)
            | self.path as u64
    }
}

/// The RNG for one (seed, stream) pair.
pub fn stream_rng(seed: u64, key: StreamKey) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key.encode());
    rng
}
