//! Random linear network coding over a simulated satellite link.
//!
//! The crate is layered bottom-up:
//!
//! * [`galois`]: GF(2^q) arithmetic and coefficient vectors.
//! * [`coding`]: generation-based and sliding-window encoders, the elimination decoder.
//! * [`channel`]: two-state Gilbert erasure channel.
//! * [`simulator`]: time-slotted link simulation with delayed feedback; every
//!   transmission scheme (including the selective-repeat ARQ baseline) sits behind the
//!   [`simulator::Scheme`] trait and is looked up by name in a
//!   [`simulator::SchemeRegistry`].
//! * [`metrics`]: delay, efficiency and erasure-rate statistics.
//! * [`multihop`]: three-link tandem comparing end-to-end coding with recoding relays.

pub mod channel;
pub mod coding;
pub mod galois;
pub mod metrics;
pub mod multihop;
pub mod simulator;

/// SplitMix64 step, used to spread small integer seeds over the full state space.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a parent seed with a list of integer labels into an independent child seed.
pub fn derive_seed(parent: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(parent), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}
