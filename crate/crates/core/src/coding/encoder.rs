use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::packet::{CodedPacket, Emission, InfoSource, PacketKind, Redundancy};
use super::{generation_bounds, generation_count, CodingError};
use crate::galois::{CoeffVector, GaloisField};

/// Per-generation decoding report sent by the sink at the end of a transmission round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeedbackMessage {
    pub generation: u32,
    /// Round whose last packet triggered the report; together with `generation` this
    /// identifies the message.
    pub round: u32,
    /// `size − rank`; zero means the generation decoded.
    pub deficit: u64,
}

/// Fills `out` with uniform field elements, redrawing if every entry is zero.
pub(crate) fn random_coefficients<R: RngCore>(field: &GaloisField, rng: &mut R, out: &mut [u8]) {
    loop {
        if field.q() == 8 {
            rng.fill_bytes(out);
        } else {
            let mask = field.mask();
            out.iter_mut().for_each(|c| *c = rng.random::<u8>() & mask);
        }
        if out.iter().any(|&c| c != 0) {
            return;
        }
    }
}

/// Builds `Σ coeffs[i]·p_{origin+i}` from the source.
fn combine(
    field: &GaloisField,
    source: &dyn InfoSource,
    coeffs: CoeffVector,
    generation_id: Option<u32>,
) -> CodedPacket {
    let len = source.payload_len();
    let mut payload = vec![0u8; len];
    if len > 0 {
        let mut scratch = vec![0u8; len];
        for (i, &a) in coeffs.coeffs().iter().enumerate() {
            if a != 0 {
                source.write_payload(coeffs.origin() + i as u64, &mut scratch);
                field.axpy(&mut payload, a, &scratch);
            }
        }
    }
    CodedPacket {
        coeffs,
        payload,
        generation_id,
        kind: PacketKind::Coded,
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingRound {
    generation: u32,
    round: u32,
    remaining: u64,
}

/// Block code: each generation is sent uncoded, followed by `⌈k(R−1)⌉` coded packets
/// drawn over that generation only.
pub struct GenerationEncoder {
    field: &'static GaloisField,
    source: Arc<dyn InfoSource>,
    k: u64,
    total: u64,
    coded_per_generation: u64,
    generations: u32,
    /// Generation whose initial round is in progress (1-based; 0 before the first packet).
    current: u32,
    uncoded_sent: u64,
    coded_sent: u64,
    rounds: Vec<u32>,
    pending: VecDeque<PendingRound>,
    seen: BTreeSet<(u32, u32)>,
    retransmissions: u64,
    rng: ChaCha8Rng,
}

impl GenerationEncoder {
    pub fn new(
        field: &'static GaloisField,
        source: Arc<dyn InfoSource>,
        k: u64,
        redundancy: Redundancy,
        seed: u64,
    ) -> Result<GenerationEncoder, CodingError> {
        if k == 0 {
            return Err(CodingError::InvalidParameter(
                "generation size must be at least 1".into(),
            ));
        }
        let total = source.len();
        let generations = generation_count(k, total);
        Ok(GenerationEncoder {
            field,
            source,
            k,
            total,
            coded_per_generation: redundancy.coded_per_generation(k),
            generations,
            current: 0,
            uncoded_sent: 0,
            coded_sent: 0,
            rounds: vec![0; generations as usize + 1],
            pending: VecDeque::new(),
            seen: BTreeSet::new(),
            retransmissions: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn generation_size(&self) -> u64 {
        self.k
    }

    pub fn generations(&self) -> u32 {
        self.generations
    }

    pub fn coded_per_generation(&self) -> u64 {
        self.coded_per_generation
    }

    /// Transmissions in a generation's initial round (tail generations keep the full
    /// coded count).
    pub fn initial_round_len(&self, generation: u32) -> u64 {
        let (first, last) = generation_bounds(generation, self.k, self.total);
        last - first + 1 + self.coded_per_generation
    }

    pub fn retransmissions(&self) -> u64 {
        self.retransmissions
    }

    /// Nothing left to send unless new feedback arrives.
    pub fn is_idle(&self) -> bool {
        self.pending.is_empty() && self.initial_rounds_done()
    }

    fn initial_rounds_done(&self) -> bool {
        self.current > self.generations
            || (self.current == self.generations
                && self.current > 0
                && self.uncoded_sent + self.coded_sent >= self.initial_round_len(self.current))
            || self.generations == 0
    }

    fn coded_over(&mut self, generation: u32) -> CodedPacket {
        let (first, last) = generation_bounds(generation, self.k, self.total);
        let mut coeffs = vec![0u8; (last - first + 1) as usize];
        random_coefficients(self.field, &mut self.rng, &mut coeffs);
        combine(
            self.field,
            self.source.as_ref(),
            CoeffVector::new(first, coeffs),
            Some(generation),
        )
    }

    /// Next packet to transmit; `None` while idle or once the stream is finished.
    ///
    /// Pending retransmission rounds go first, in the order their feedback arrived.
    pub fn next_packet(&mut self) -> Option<Emission> {
        if let Some(front) = self.pending.front_mut() {
            front.remaining -= 1;
            let PendingRound {
                generation,
                round,
                remaining,
            } = *front;
            if remaining == 0 {
                self.pending.pop_front();
            }
            self.retransmissions += 1;
            let packet = self.coded_over(generation);
            return Some(Emission {
                packet,
                round,
                closes_round: remaining == 0,
                retransmission: true,
            });
        }

        if self.current == 0
            || (self.current <= self.generations
                && self.uncoded_sent + self.coded_sent >= self.initial_round_len(self.current))
        {
            self.current += 1;
            self.uncoded_sent = 0;
            self.coded_sent = 0;
        }
        if self.current > self.generations {
            return None;
        }

        let generation = self.current;
        let (first, last) = generation_bounds(generation, self.k, self.total);
        let size = last - first + 1;
        let round_len = size + self.coded_per_generation;
        let packet = if self.uncoded_sent < size {
            let index = first + self.uncoded_sent;
            self.uncoded_sent += 1;
            CodedPacket::uncoded(index, self.source.payload(index), Some(generation))
        } else {
            self.coded_sent += 1;
            self.coded_over(generation)
        };
        Some(Emission {
            packet,
            round: 0,
            closes_round: self.uncoded_sent + self.coded_sent == round_len,
            retransmission: false,
        })
    }

    /// Queues `deficit` more coded packets for the reported generation.
    ///
    /// Returns whether a retransmission round was queued. Each `(generation, round)`
    /// message is acted on at most once.
    pub fn handle_feedback(&mut self, msg: &FeedbackMessage) -> Result<bool, CodingError> {
        if msg.generation == 0 || msg.generation > self.current.min(self.generations) {
            return Err(CodingError::UnknownGeneration(msg.generation));
        }
        if !self.seen.insert((msg.generation, msg.round)) || msg.deficit == 0 {
            return Ok(false);
        }
        let slot = &mut self.rounds[msg.generation as usize];
        *slot += 1;
        self.pending.push_back(PendingRound {
            generation: msg.generation,
            round: *slot,
            remaining: msg.deficit,
        });
        Ok(true)
    }
}

/// Systematic sliding-window code: after every `n − 1` uncoded packets
/// (`n = R/(R−1)`) one coded packet over all packets sent so far.
///
/// The position counter carries fractional credit, so for non-integer `n` the
/// long-run rate is exactly `R`; for integer `n` the schedule is the plain
/// "`u < n` ⇒ uncoded, else coded and reset `u` to 1" rule.
pub struct SlidingWindowEncoder {
    field: &'static GaloisField,
    source: Arc<dyn InfoSource>,
    redundancy: Redundancy,
    total: u64,
    next_index: u64,
    coded_sent: u64,
    flush_sent: u64,
    flush_at_end: bool,
    stopped: bool,
    rng: ChaCha8Rng,
}

impl SlidingWindowEncoder {
    pub fn new(
        field: &'static GaloisField,
        source: Arc<dyn InfoSource>,
        redundancy: Redundancy,
        seed: u64,
    ) -> SlidingWindowEncoder {
        SlidingWindowEncoder {
            field,
            total: source.len(),
            source,
            redundancy,
            next_index: 1,
            coded_sent: 0,
            flush_sent: 0,
            flush_at_end: false,
            stopped: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// After the last scheduled packet keep emitting coded packets over the whole
    /// stream until [`stop`](Self::stop) is called.
    pub fn with_end_flush(mut self, flush: bool) -> SlidingWindowEncoder {
        self.flush_at_end = flush;
        self
    }

    /// `R = 1` leaves the spacing undefined; the encoder then sends everything uncoded.
    pub fn is_degenerate(&self) -> bool {
        self.redundancy.is_one()
    }

    pub fn spacing(&self) -> Option<f64> {
        self.redundancy.spacing()
    }

    pub fn flush_sent(&self) -> u64 {
        self.flush_sent
    }

    /// Terminal acknowledgement from the sink.
    pub fn stop(&mut self) {
        self.stopped = true;
    }

    /// Whether the base schedule is complete (flush packets may still follow).
    pub fn schedule_done(&self) -> bool {
        self.next_index > self.total && !self.coded_pending()
    }

    fn coded_pending(&self) -> bool {
        let sent = self.next_index - 1;
        sent > 0 && self.redundancy.coded_due(sent, self.coded_sent)
    }

    fn coded_through(&mut self, last: u64) -> CodedPacket {
        let mut coeffs = vec![0u8; last as usize];
        random_coefficients(self.field, &mut self.rng, &mut coeffs);
        combine(
            self.field,
            self.source.as_ref(),
            CoeffVector::new(1, coeffs),
            None,
        )
    }

    pub fn next_packet(&mut self) -> Option<Emission> {
        if self.stopped {
            return None;
        }
        let sent = self.next_index - 1;
        if self.coded_pending() {
            self.coded_sent += 1;
            return Some(Emission {
                packet: self.coded_through(sent),
                round: 0,
                closes_round: false,
                retransmission: false,
            });
        }
        if self.next_index <= self.total {
            let index = self.next_index;
            self.next_index += 1;
            return Some(Emission {
                packet: CodedPacket::uncoded(index, self.source.payload(index), None),
                round: 0,
                closes_round: false,
                retransmission: false,
            });
        }
        if self.flush_at_end && self.total > 0 {
            self.flush_sent += 1;
            return Some(Emission {
                packet: self.coded_through(self.total),
                round: 0,
                closes_round: false,
                retransmission: true,
            });
        }
        None
    }
}
