//! Seeded random substreams.
//!
//! Each stochastic source (arrivals, service times, link loss, controller
//! coin flips) owns an independent generator derived from the scenario seed,
//! so switching a control algorithm on or off never perturbs the arrival or
//! loss sequences of an otherwise identical run.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substream {
    Arrivals,
    Service,
    LinkLoss,
    Control,
}

const SUBSTREAM_COUNT: usize = 4;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn substream_seed(seed: u64, which: Substream) -> u64 {
    // Fixed per-stream salts keep the derivation stable across releases.
    let salt = match which {
        Substream::Arrivals => 0x41525249u64,
        Substream::Service => 0x53525643u64,
        Substream::LinkLoss => 0x4c4f5353u64,
        Substream::Control => 0x43545254u64,
    };
    splitmix64(seed ^ splitmix64(salt))
}

pub struct RandomStreams {
    streams: [ChaCha12Rng; SUBSTREAM_COUNT],
}

impl RandomStreams {
    pub fn new(seed: u64) -> Self {
        RandomStreams {
            streams: [
                ChaCha12Rng::seed_from_u64(substream_seed(seed, Substream::Arrivals)),
                ChaCha12Rng::seed_from_u64(substream_seed(seed, Substream::Service)),
                ChaCha12Rng::seed_from_u64(substream_seed(seed, Substream::LinkLoss)),
                ChaCha12Rng::seed_from_u64(substream_seed(seed, Substream::Control)),
            ],
        }
    }

    fn stream(&mut self, which: Substream) -> &mut ChaCha12Rng {
        let idx = match which {
            Substream::Arrivals => 0,
            Substream::Service => 1,
            Substream::LinkLoss => 2,
            Substream::Control => 3,
        };
        &mut self.streams[idx]
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self, which: Substream) -> f64 {
        self.stream(which).gen::<f64>()
    }

    /// Exponential draw by inversion. `rate` must be positive.
    pub fn exponential(&mut self, which: Substream, rate: f64) -> f64 {
        assert!(rate > 0.0, "exponential rate must be positive, got {rate}");
        let u = self.uniform(which);
        -(1.0 - u).ln() / rate
    }

    /// Bernoulli draw; p = 0 never fires, p = 1 always fires.
    pub fn bernoulli(&mut self, which: Substream, p: f64) -> bool {
        assert!((0.0..=1.0).contains(&p), "bernoulli p out of range: {p}");
        self.uniform(which) < p
    }
}
