//! Three-link tandem `S → R1 → R2 → D` with independent Bernoulli erasures per link.
//!
//! Two strategies are compared:
//!
//! * **End-to-end**: `S` adds enough coded packets to cover the loss of all three
//!   links, the relays forward whatever arrives unchanged and only `D` does algebra.
//! * **Hop-by-hop**: every transmitting node sizes its redundancy to its own outgoing
//!   link. Relays recode from their buffer (fresh combinations, no decoding) and keep
//!   sending until the next node holds a full-rank block.
//!
//! The stream is cut into blocks that are coded independently. Missing degrees of
//! freedom are topped up one packet at a time (an idealised per-hop or end-to-end
//! acknowledgement), and those extra packets are counted like any other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{BernoulliChannel, ChannelError, ErasureChannel};
use crate::coding::{CodedPacket, InfoSource, PacketKind, PatternSource};
use crate::derive_seed;
use crate::galois::{CoeffVector, FieldError, GaloisField};

pub const LINKS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TandemError {
    #[error("link erasure probability {0} must lie in [0, 1)")]
    Erasure(f64),
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("sink recovered wrong data for packet {0}")]
    Corrupted(u64),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    EndToEnd,
    HopByHop,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::EndToEnd => "end-to-end",
            Strategy::HopByHop => "hop-by-hop",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TandemConfig {
    pub erasures: [f64; LINKS],
    pub stream_len: u64,
    pub strategy: Strategy,
    /// Packets per independently coded block; `None` codes the whole stream at once.
    #[serde(default)]
    pub block_size: Option<u64>,
    pub field_bits: u8,
    /// Payload bytes per packet; non-zero payloads are checked after decoding.
    #[serde(default)]
    pub payload_len: usize,
    pub seed: u64,
}

impl TandemConfig {
    pub fn new(erasures: [f64; LINKS], stream_len: u64, strategy: Strategy) -> TandemConfig {
        TandemConfig {
            erasures,
            stream_len,
            strategy,
            block_size: Some(256),
            field_bits: 8,
            payload_len: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TandemError> {
        if let Some(&e) = self.erasures.iter().find(|e| !(0.0..1.0).contains(*e)) {
            return Err(TandemError::Erasure(e));
        }
        if self.stream_len == 0 {
            return Err(TandemError::Invalid {
                field: "stream_len",
                reason: "must be at least 1".into(),
            });
        }
        if self.block_size == Some(0) {
            return Err(TandemError::Invalid {
                field: "block_size",
                reason: "must be at least 1".into(),
            });
        }
        GaloisField::get(self.field_bits)?;
        Ok(())
    }
}

/// `⌈P·(∏(1−ε_i)^{-1} − 1)⌉`: coded packets the source adds so that, in expectation,
/// `P` packets cross every listed link.
pub fn e2e_redundancy_count(stream_len: u64, erasures: &[f64]) -> Result<u64, TandemError> {
    let mut factor = 1.0;
    for &e in erasures {
        if !(0.0..1.0).contains(&e) {
            return Err(TandemError::Erasure(e));
        }
        factor /= 1.0 - e;
    }
    let extra = stream_len as f64 * (factor - 1.0);
    // Absorb floating-point noise on exact integers.
    Ok((extra - 1e-9).ceil().max(0.0) as u64)
}

/// Forward-only echelon form over one block: tracks rank, solves on request.
#[derive(Debug, Clone)]
struct Echelon {
    field: &'static GaloisField,
    width: usize,
    /// Indexed by pivot column; each stored row has a 1 at its pivot.
    rows: Vec<Option<(Vec<u8>, Vec<u8>)>>,
    rank: usize,
}

impl Echelon {
    fn new(field: &'static GaloisField, width: usize) -> Echelon {
        Echelon {
            field,
            width,
            rows: vec![None; width],
            rank: 0,
        }
    }

    /// Reduces and stores the row if it is innovative.
    fn insert(&mut self, mut coeffs: Vec<u8>, mut payload: Vec<u8>) -> bool {
        debug_assert_eq!(coeffs.len(), self.width);
        for col in 0..self.width {
            let a = coeffs[col];
            if a == 0 {
                continue;
            }
            match &self.rows[col] {
                Some((row, row_payload)) => {
                    self.field.axpy(&mut coeffs[col..], a, &row[col..]);
                    self.field.axpy(&mut payload, a, row_payload);
                }
                None => {
                    let inv = self.field.inv(a).expect("non-zero pivot");
                    self.field.scale(&mut coeffs[col..], inv);
                    self.field.scale(&mut payload, inv);
                    self.rows[col] = Some((coeffs, payload));
                    self.rank += 1;
                    return true;
                }
            }
        }
        false
    }

    fn contains(&self, coeffs: &[u8]) -> bool {
        let mut probe = self.clone();
        let payload_len = self
            .rows
            .iter()
            .flatten()
            .map(|(_, p)| p.len())
            .next()
            .unwrap_or(0);
        !probe.insert(coeffs.to_vec(), vec![0; payload_len])
    }

    fn is_full(&self) -> bool {
        self.rank == self.width
    }

    /// Back substitution; requires full rank. Returns the payload of every column.
    fn solve(mut self) -> Vec<Vec<u8>> {
        assert!(self.is_full(), "solve needs a full-rank block");
        for p in (0..self.width).rev() {
            let (mut row, mut payload) = self.rows[p].take().expect("full rank");
            for c in p + 1..self.width {
                let a = row[c];
                if a != 0 {
                    let (_, solved) = self.rows[c].as_ref().expect("solved column");
                    self.field.axpy(&mut payload, a, solved);
                    row[c] = 0;
                }
            }
            self.rows[p] = Some((row, payload));
        }
        self.rows
            .into_iter()
            .map(|r| r.expect("full rank").1)
            .collect()
    }
}

/// The packets a relay holds for one block, kept exactly as received.
///
/// Recoding combines them linearly in original packet coordinates; the buffer never
/// solves for individual packets.
#[derive(Debug, Clone)]
pub struct RecodingBuffer {
    field: &'static GaloisField,
    origin: u64,
    width: usize,
    held: Vec<CodedPacket>,
    held_dense: Vec<Vec<u8>>,
    echelon: Echelon,
}

impl RecodingBuffer {
    /// Buffer for the block of `width` packets starting at index `origin`.
    pub fn new(field: &'static GaloisField, origin: u64, width: usize) -> RecodingBuffer {
        RecodingBuffer {
            field,
            origin,
            width,
            held: Vec::new(),
            held_dense: Vec::new(),
            echelon: Echelon::new(field, width),
        }
    }

    fn dense(&self, pkt: &CodedPacket) -> Vec<u8> {
        let mut v = vec![0u8; self.width];
        let c = &pkt.coeffs;
        for (i, &a) in c.coeffs().iter().enumerate() {
            let col = c.origin() + i as u64 - self.origin;
            v[col as usize] = a;
        }
        v
    }

    /// Stores the packet if it adds rank; returns whether it did.
    pub fn push(&mut self, pkt: CodedPacket) -> bool {
        let dense = self.dense(&pkt);
        if self.echelon.insert(dense.clone(), pkt.payload.clone()) {
            self.held.push(pkt);
            self.held_dense.push(dense);
            true
        } else {
            false
        }
    }

    pub fn rank(&self) -> usize {
        self.echelon.rank
    }

    pub fn held(&self) -> &[CodedPacket] {
        &self.held
    }

    /// Whether `coeffs` (block coordinates) lies in the span of the held packets.
    pub fn spans(&self, coeffs: &[u8]) -> bool {
        self.echelon.contains(coeffs)
    }

    /// `Σ coeffs[j]·held[j]`, expressed over the original packets; `None` when empty.
    pub fn recode_with(&self, coeffs: &[u8]) -> Option<CodedPacket> {
        if self.held.is_empty() {
            return None;
        }
        assert_eq!(coeffs.len(), self.held.len(), "one coefficient per held packet");
        let payload_len = self.held[0].payload.len();
        let mut out = vec![0u8; self.width];
        let mut payload = vec![0u8; payload_len];
        for ((&a, pkt), dense) in coeffs.iter().zip(&self.held).zip(&self.held_dense) {
            if a == 0 {
                continue;
            }
            self.field.axpy(&mut out, a, dense);
            self.field.axpy(&mut payload, a, &pkt.payload);
        }
        Some(CodedPacket {
            coeffs: CoeffVector::new(self.origin, out),
            payload,
            generation_id: None,
            kind: PacketKind::Coded,
        })
    }

    /// Fresh uniformly random combination of the held packets.
    pub fn recode(&self, rng: &mut ChaCha8Rng) -> Option<CodedPacket> {
        if self.held.is_empty() {
            return None;
        }
        let mut coeffs = vec![0u8; self.held.len()];
        loop {
            crate::coding::fill_random_coefficients(self.field, rng, &mut coeffs);
            let pkt = self.recode_with(&coeffs)?;
            // Independent held packets never combine to zero with non-zero coefficients.
            if !pkt.coeffs.is_zero() {
                return Some(pkt);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    /// 1-based.
    pub link: usize,
    pub packets_carried: u64,
    pub packets_received: u64,
    /// Packets that raised the receiving node's rank.
    pub useful_dof_delivered: u64,
    /// Useful degrees of freedom over packets received.
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TandemReport {
    pub strategy: Strategy,
    pub links: [LinkReport; LINKS],
    pub blocks: u64,
    /// Solves performed at the destination (one per block).
    pub sink_decodes: u64,
    /// Solves performed at relays (always zero).
    pub relay_decodes: u64,
    /// Packets sent beyond the nominal schedule to fill rank shortfalls, per link.
    pub top_ups: [u64; LINKS],
}

#[derive(Default, Clone, Copy)]
struct LinkCounter {
    carried: u64,
    received: u64,
    useful: u64,
}

struct Links {
    channels: Vec<BernoulliChannel>,
    counters: [LinkCounter; LINKS],
    top_ups: [u64; LINKS],
}

impl Links {
    /// Sends over link `i` (0-based); `true` if the packet arrived.
    fn send(&mut self, i: usize) -> bool {
        self.counters[i].carried += 1;
        let ok = !self.channels[i].step();
        if ok {
            self.counters[i].received += 1;
        }
        ok
    }
}

/// Runs the whole stream through the tandem and reports per-link accounting.
pub fn run_tandem(cfg: &TandemConfig) -> Result<TandemReport, TandemError> {
    cfg.validate()?;
    let field = GaloisField::get(cfg.field_bits)?;
    let stream = PatternSource {
        len: cfg.stream_len,
        payload_len: cfg.payload_len,
        seed: derive_seed(cfg.seed, &[0]),
    };
    let channels = (0..LINKS)
        .map(|i| BernoulliChannel::new(cfg.erasures[i], derive_seed(cfg.seed, &[1, i as u64])))
        .collect::<Result<Vec<_>, _>>()?;
    let mut links = Links {
        channels,
        counters: [LinkCounter::default(); LINKS],
        top_ups: [0; LINKS],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2]));
    let block = cfg.block_size.unwrap_or(cfg.stream_len).min(cfg.stream_len);

    let mut blocks = 0;
    let mut first = 1;
    while first <= cfg.stream_len {
        let last = (first + block - 1).min(cfg.stream_len);
        let width = (last - first + 1) as usize;
        let solved = match cfg.strategy {
            Strategy::EndToEnd => end_to_end_block(cfg, field, &stream, first, width, &mut links, &mut rng),
            Strategy::HopByHop => hop_by_hop_block(cfg, field, &stream, first, width, &mut links, &mut rng),
        }?;
        if cfg.payload_len > 0 {
            for (i, payload) in solved.iter().enumerate() {
                let index = first + i as u64;
                if *payload != stream.payload(index) {
                    return Err(TandemError::Corrupted(index));
                }
            }
        }
        blocks += 1;
        first = last + 1;
    }

    let links_report = std::array::from_fn(|i| {
        let c = links.counters[i];
        LinkReport {
            link: i + 1,
            packets_carried: c.carried,
            packets_received: c.received,
            useful_dof_delivered: c.useful,
            efficiency: if c.received == 0 {
                1.0
            } else {
                c.useful as f64 / c.received as f64
            },
        }
    });
    Ok(TandemReport {
        strategy: cfg.strategy,
        links: links_report,
        blocks,
        sink_decodes: blocks,
        relay_decodes: 0,
        top_ups: links.top_ups,
    })
}

fn source_packet(
    field: &'static GaloisField,
    stream: &PatternSource,
    first: u64,
    width: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> CodedPacket {
    if n < width {
        let index = first + n as u64;
        return CodedPacket::uncoded(index, stream.payload(index), None);
    }
    let mut coeffs = vec![0u8; width];
    crate::coding::fill_random_coefficients(field, rng, &mut coeffs);
    let mut payload = vec![0u8; stream.payload_len];
    if stream.payload_len > 0 {
        for (i, &a) in coeffs.iter().enumerate() {
            field.axpy(&mut payload, a, &stream.payload(first + i as u64));
        }
    }
    CodedPacket {
        coeffs: CoeffVector::new(first, coeffs),
        payload,
        generation_id: None,
        kind: PacketKind::Coded,
    }
}

fn end_to_end_block(
    cfg: &TandemConfig,
    field: &'static GaloisField,
    stream: &PatternSource,
    first: u64,
    width: usize,
    links: &mut Links,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<u8>>, TandemError> {
    let nominal = width + e2e_redundancy_count(width as u64, &cfg.erasures)? as usize;
    // Relays only track rank for accounting; they forward packets unchanged.
    let mut nodes: Vec<RecodingBuffer> = (0..LINKS)
        .map(|_| RecodingBuffer::new(field, first, width))
        .collect();
    let mut n = 0;
    // The nominal batch goes out in full; top-ups follow only if the sink is short.
    while n < nominal || nodes[LINKS - 1].rank() < width {
        if n >= nominal {
            links.top_ups[0] += 1;
        }
        let pkt = source_packet(field, stream, first, width, n, rng);
        n += 1;
        for (hop, node) in nodes.iter_mut().enumerate() {
            if !links.send(hop) {
                break;
            }
            if node.push(pkt.clone()) {
                links.counters[hop].useful += 1;
            }
        }
    }
    let sink = nodes.pop().expect("sink buffer");
    Ok(sink.echelon.solve())
}

fn hop_by_hop_block(
    cfg: &TandemConfig,
    field: &'static GaloisField,
    stream: &PatternSource,
    first: u64,
    width: usize,
    links: &mut Links,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<u8>>, TandemError> {
    let mut upstream: Option<RecodingBuffer> = None;
    for hop in 0..LINKS {
        let nominal = width + e2e_redundancy_count(width as u64, &[cfg.erasures[hop]])? as usize;
        let mut next = RecodingBuffer::new(field, first, width);
        let mut n = 0;
        while n < nominal || next.rank() < width {
            if n >= nominal {
                links.top_ups[hop] += 1;
            }
            let pkt = match &upstream {
                None => source_packet(field, stream, first, width, n, rng),
                Some(buf) => buf.recode(rng).expect("relay holds a full block"),
            };
            n += 1;
            if links.send(hop) && next.push(pkt) {
                links.counters[hop].useful += 1;
            }
        }
        upstream = Some(next);
    }
    Ok(upstream.expect("sink buffer").echelon.solve())
}
