//! Counter-based random streams.
//!
//! Every random draw in the crate is addressed by `(seed, role, replication,
//! index)`. The first three select a ChaCha8 key, the index selects the
//! ChaCha stream, so any particle's noise can be regenerated without
//! touching any other stream and results do not depend on thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a stream is used for. Distinct roles never share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamRole {
    Common,
    Idiosyncratic,
    Initial,
    ReferenceIdiosyncratic,
    ReferenceInitial,
    Quenched,
    Auxiliary,
}

impl StreamRole {
    fn tag(self) -> u64 {
        match self {
            StreamRole::Common => 0x11,
            StreamRole::Idiosyncratic => 0x22,
            StreamRole::Initial => 0x33,
            StreamRole::ReferenceIdiosyncratic => 0x44,
            StreamRole::ReferenceInitial => 0x55,
            StreamRole::Quenched => 0x66,
            StreamRole::Auxiliary => 0x77,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Opens the stream `(seed, role, replication, index)`.
pub fn stream(seed: u64, role: StreamRole, replication: u64, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ role.tag().rotate_left(56) ^ replication.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Fills `out` with i.i.d. `N(0, variance)` draws.
pub fn fill_normal(rng: &mut ChaCha8Rng, variance: f64, out: &mut [f64]) {
    let sd = variance.sqrt();
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = sd * z;
    }
}

/// Derives a child seed, used when an experiment needs several independent
/// seed families (for example, one per N in a convergence study).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut s = seed ^ salt.wrapping_mul(0xA24B_AED4_963E_E407);
    splitmix64(&mut s)
}
