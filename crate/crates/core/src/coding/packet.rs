use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CodingError;
use crate::galois::CoeffVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacketKind {
    Uncoded,
    Coded,
}

/// Payload plus the coefficients that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedPacket {
    pub coeffs: CoeffVector,
    pub payload: Vec<u8>,
    pub generation_id: Option<u32>,
    pub kind: PacketKind,
}

impl CodedPacket {
    pub fn uncoded(index: u64, payload: Vec<u8>, generation_id: Option<u32>) -> CodedPacket {
        CodedPacket {
            coeffs: CoeffVector::unit(index),
            payload,
            generation_id,
            kind: PacketKind::Uncoded,
        }
    }

    /// Index of the information packet carried verbatim, if uncoded.
    pub fn info_index(&self) -> Option<u64> {
        match self.kind {
            PacketKind::Uncoded => Some(self.coeffs.origin()),
            PacketKind::Coded => None,
        }
    }
}

/// One source transmission together with the header fields a receiver would learn
/// from sequence numbering, even when the packet itself is lost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emission {
    pub packet: CodedPacket,
    /// Transmission round within the generation; 0 is the initial round.
    pub round: u32,
    /// Last scheduled packet of its round.
    pub closes_round: bool,
    /// Sent because of feedback (or end-of-stream flushing) rather than the base schedule.
    pub retransmission: bool,
}

/// An information packet handed to the upper layer, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DeliveryEvent {
    pub packet_index: u64,
    pub delivery_slot: u64,
}

/// The information packets `1..=len()` of a stream.
pub trait InfoSource: Send + Sync {
    fn len(&self) -> u64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn payload_len(&self) -> usize;

    /// Writes the payload of packet `index` (1-based) into `out`.
    fn write_payload(&self, index: u64, out: &mut [u8]);

    fn payload(&self, index: u64) -> Vec<u8> {
        let mut out = vec![0; self.payload_len()];
        self.write_payload(index, &mut out);
        out
    }
}

/// Stream with empty payloads; coding then only manipulates coefficients.
#[derive(Debug, Clone, Copy)]
pub struct ZeroSource {
    pub len: u64,
}

impl InfoSource for ZeroSource {
    fn len(&self) -> u64 {
        self.len
    }

    fn payload_len(&self) -> usize {
        0
    }

    fn write_payload(&self, _index: u64, _out: &mut [u8]) {}
}

/// Deterministic pseudo-random payloads derived from `(seed, index)`.
#[derive(Debug, Clone, Copy)]
pub struct PatternSource {
    pub len: u64,
    pub payload_len: usize,
    pub seed: u64,
}

impl InfoSource for PatternSource {
    fn len(&self) -> u64 {
        self.len
    }

    fn payload_len(&self) -> usize {
        self.payload_len
    }

    fn write_payload(&self, index: u64, out: &mut [u8]) {
        let mut state = self.seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        for chunk in out.chunks_mut(8) {
            state = crate::splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes()[..chunk.len()]);
        }
    }
}

/// Redundancy `R ≥ 1` as an exact ratio: `R` packets are sent per information packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Redundancy {
    num: u64,
    den: u64,
}

impl Redundancy {
    pub const ONE: Redundancy = Redundancy { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Redundancy, CodingError> {
        if den == 0 || num < den {
            return Err(CodingError::InvalidParameter(format!(
                "redundancy {num}/{den} must be a ratio >= 1"
            )));
        }
        let g = gcd(num, den);
        Ok(Redundancy {
            num: num / g,
            den: den / g,
        })
    }

    /// Converts through the shortest decimal rendering, so `1.43` becomes `143/100`.
    pub fn from_f64(value: f64) -> Result<Redundancy, CodingError> {
        if !value.is_finite() {
            return Err(CodingError::InvalidParameter(format!(
                "redundancy {value} is not finite"
            )));
        }
        format!("{value}").parse()
    }

    pub fn numerator(&self) -> u64 {
        self.num
    }

    pub fn denominator(&self) -> u64 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_one(&self) -> bool {
        self.num == self.den
    }

    /// Coded packets appended to a generation of size `k`: `⌈k(R−1)⌉`.
    pub fn coded_per_generation(&self, k: u64) -> u64 {
        let extra = k as u128 * (self.num - self.den) as u128;
        extra.div_ceil(self.den as u128) as u64
    }

    /// Sliding-window spacing `n = R/(R−1)`; `None` when `R = 1`.
    pub fn spacing(&self) -> Option<f64> {
        (!self.is_one()).then(|| self.num as f64 / (self.num - self.den) as f64)
    }

    /// Whether the schedule owes another coded packet after `info_sent` information
    /// packets and `coded_sent` coded ones: `info_sent·(R−1) ≥ coded_sent + 1`.
    pub fn coded_due(&self, info_sent: u64, coded_sent: u64) -> bool {
        info_sent as u128 * (self.num - self.den) as u128
            >= (coded_sent as u128 + 1) * self.den as u128
    }
}

impl fmt::Display for Redundancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl Serialize for Redundancy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Redundancy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Number(v) => Redundancy::from_f64(v),
            Repr::Text(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

impl FromStr for Redundancy {
    type Err = CodingError;

    fn from_str(s: &str) -> Result<Redundancy, CodingError> {
        let bad = || CodingError::InvalidParameter(format!("cannot parse redundancy {s:?}"));
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let num = n.trim().parse().map_err(|_| bad())?;
            let den = d.trim().parse().map_err(|_| bad())?;
            return Redundancy::new(num, den);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if !frac.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 12 {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let num = format!("{int}{frac}").parse::<u64>().map_err(|_| bad())?;
        Redundancy::new(num, den)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
