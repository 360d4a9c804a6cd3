//! Reproducible random streams.
//!
//! Every normal draw is a pure function of `(master seed, replica, role,
//! particle index, step)`: each `(replica, role, index)` triple owns its own
//! ChaCha stream and consumes it strictly in step order. Nesting follows: a
//! system of `N` particles sees the same idiosyncratic noise as the first
//! `N` particles of any larger system built from the same master seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamRole {
    InitA = 1,
    InitB = 2,
    Idiosyncratic = 3,
    Common = 4,
    Aux = 5,
}

const INDEX_BITS: u32 = 24;
const ROLE_BITS: u32 = 8;

/// Provenance of a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub master_seed: u64,
    pub replica: u32,
    pub role: StreamRole,
}

impl Lineage {
    pub fn new(master_seed: u64, replica: u32, role: StreamRole) -> Self {
        Self {
            master_seed,
            replica,
            role,
        }
    }

    /// Stream for the `index`-th consumer (particle) of this lineage.
    pub fn stream(&self, index: usize) -> ChaCha8Rng {
        assert!(index < 1 << INDEX_BITS, "stream index {index} out of range");
        let id = (u64::from(self.replica) << (INDEX_BITS + ROLE_BITS))
            | ((self.role as u64) << INDEX_BITS)
            | index as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(id);
        rng
    }
}

/// Master seed of an independent run `run` derived from `master`.
pub fn derive_seed(master: u64, run: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = master ^ run.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal increments of one time step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepNoise {
    /// Drives `sigma1 dB^1`, reflected in the coupled system.
    pub xi1: Vec<f64>,
    /// Drives `bar_sigma(X) dB^2`, always synchronous.
    pub xi2: Vec<f64>,
    /// Common noise, shared by all particles.
    pub zeta: f64,
}

impl StepNoise {
    pub fn zeros(n: usize) -> Self {
        Self {
            xi1: vec![0.0; n],
            xi2: vec![0.0; n],
            zeta: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.xi1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi1.is_empty()
    }
}

/// Per-particle idiosyncratic streams plus the replica's common stream.
pub struct NoiseSource {
    idio: Vec<ChaCha8Rng>,
    common: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(master_seed: u64, replica: u32, n: usize) -> Self {
        let idio = Lineage::new(master_seed, replica, StreamRole::Idiosyncratic);
        let common = Lineage::new(master_seed, replica, StreamRole::Common);
        Self {
            idio: (0..n).map(|i| idio.stream(i)).collect(),
            common: common.stream(0),
        }
    }

    pub fn len(&self) -> usize {
        self.idio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idio.is_empty()
    }

    /// Draw the next step. Each particle stream yields `xi1` then `xi2`.
    pub fn fill(&mut self, out: &mut StepNoise) {
        let n = self.idio.len();
        out.xi1.resize(n, 0.0);
        out.xi2.resize(n, 0.0);
        for (i, rng) in self.idio.iter_mut().enumerate() {
            out.xi1[i] = rng.sample(StandardNormal);
            out.xi2[i] = rng.sample(StandardNormal);
        }
        out.zeta = self.common.sample(StandardNormal);
    }
}
