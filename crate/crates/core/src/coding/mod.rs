//! Systematic RLNC encoders and an in-order elimination decoder.
//!
//! Two encoders share the same packet type:
//!
//! * [`GenerationEncoder`] partitions the stream into blocks of `k` packets, sends each
//!   block uncoded and then appends `⌈k(R−1)⌉` random combinations of that block.
//!   Feedback can request more combinations for a block that failed to decode.
//! * [`SlidingWindowEncoder`] interleaves one coded packet after every run of uncoded
//!   packets; each coded packet combines *every* packet sent so far.
//!
//! [`Decoder`] keeps the undelivered part of the stream in reduced row-echelon form
//! and releases packets to the upper layer strictly in order. [`GenerationDecoder`]
//! adds per-block bookkeeping (degrees of freedom, flush on block close).

mod decoder;
mod encoder;
mod packet;

pub use decoder::{Decoder, FlushOutcome, GenerationDecoder};
pub(crate) use encoder::random_coefficients as fill_random_coefficients;
pub use encoder::{FeedbackMessage, GenerationEncoder, SlidingWindowEncoder};
pub use packet::{
    CodedPacket, DeliveryEvent, Emission, InfoSource, PacketKind, PatternSource, Redundancy,
    ZeroSource,
};

use thiserror::Error;

use crate::galois::FieldError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodingError {
    #[error("vectors are not aligned: origin/len {left:?} vs {right:?}")]
    Misaligned { left: (u64, usize), right: (u64, usize) },
    #[error("payload has {got} bytes, stream uses {expected}")]
    PayloadLength { expected: usize, got: usize },
    #[error("feedback names unknown generation {0}")]
    UnknownGeneration(u32),
    #[error("generation {generation} still open: {observed} of {scheduled} transmissions seen")]
    GenerationOpen {
        generation: u32,
        observed: u64,
        scheduled: u64,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Index bounds `[first, last]` of generation `generation` (1-based) for block size `k`.
pub fn generation_bounds(generation: u32, k: u64, total: u64) -> (u64, u64) {
    let first = (generation as u64 - 1) * k + 1;
    let last = (generation as u64 * k).min(total);
    (first, last)
}

/// Number of generations needed to cover `total` packets.
pub fn generation_count(k: u64, total: u64) -> u32 {
    total.div_ceil(k) as u32
}

/// Generation holding packet `index`.
pub fn generation_of(index: u64, k: u64) -> u32 {
    ((index - 1) / k + 1) as u32
}
