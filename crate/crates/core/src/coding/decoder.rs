use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::packet::{CodedPacket, DeliveryEvent};
use super::{generation_bounds, generation_count, CodingError};
use crate::galois::GaloisField;

#[derive(Debug, Clone)]
enum Column {
    Unknown,
    Known(Vec<u8>),
}

/// A non-unit row of the reduced echelon form. `entries` is sorted by column and its
/// first column is the pivot (coefficient 1).
#[derive(Debug, Clone)]
struct Row {
    entries: Vec<(u64, u8)>,
    payload: Vec<u8>,
}

impl Row {
    fn coeff(&self, col: u64) -> u8 {
        self.entries
            .binary_search_by_key(&col, |&(c, _)| c)
            .map_or(0, |i| self.entries[i].1)
    }

    /// `self ← self + a·other`.
    fn add_scaled(&mut self, field: &GaloisField, a: u8, other: &Row) {
        let mut merged = Vec::with_capacity(self.entries.len() + other.entries.len());
        let (mut i, mut j) = (0, 0);
        while i < self.entries.len() || j < other.entries.len() {
            let left = self.entries.get(i).copied();
            let right = other.entries.get(j).copied();
            match (left, right) {
                (Some((cl, vl)), Some((cr, vr))) if cl == cr => {
                    let v = vl ^ field.mul(a, vr);
                    if v != 0 {
                        merged.push((cl, v));
                    }
                    i += 1;
                    j += 1;
                }
                (Some((cl, vl)), Some((cr, _))) if cl < cr => {
                    merged.push((cl, vl));
                    i += 1;
                }
                (Some(l), None) => {
                    merged.push(l);
                    i += 1;
                }
                (_, Some((cr, vr))) => {
                    merged.push((cr, field.mul(a, vr)));
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        self.entries = merged;
        field.axpy(&mut self.payload, a, &other.payload);
    }
}

/// Gaussian-elimination decoder with in-order release.
///
/// Packets below the window origin are finished (delivered or abandoned). Within the
/// window every column is either known, or unknown and possibly the pivot of a row in
/// reduced echelon form. Rows never touch known columns, so a row collapsing to a
/// single entry means that packet has been decoded.
pub struct Decoder {
    field: &'static GaloisField,
    payload_len: usize,
    origin: u64,
    window: VecDeque<Column>,
    rows: BTreeMap<u64, Row>,
    known: usize,
    delivered: u64,
    delivered_payloads: Vec<Vec<u8>>,
    abandoned: BTreeSet<u64>,
    discarded: u64,
}

impl Decoder {
    pub fn new(field: &'static GaloisField, payload_len: usize) -> Decoder {
        Decoder {
            field,
            payload_len,
            origin: 1,
            window: VecDeque::new(),
            rows: BTreeMap::new(),
            known: 0,
            delivered: 0,
            delivered_payloads: Vec::new(),
            abandoned: BTreeSet::new(),
            discarded: 0,
        }
    }

    /// Lowest index not yet delivered or abandoned.
    pub fn window_origin(&self) -> u64 {
        self.origin
    }

    /// Highest index passed to the upper layer or given up on, in order.
    pub fn delivered_through(&self) -> u64 {
        self.origin - 1
    }

    pub fn delivered_count(&self) -> u64 {
        self.delivered
    }

    /// Independent rows held for the undelivered window.
    pub fn rank(&self) -> usize {
        self.known + self.rows.len()
    }

    /// Packets rejected because they combine an abandoned packet.
    pub fn discarded(&self) -> u64 {
        self.discarded
    }

    pub fn is_decoded(&self, index: u64) -> bool {
        if index < self.origin {
            !self.abandoned.contains(&index)
        } else {
            matches!(
                self.window.get((index - self.origin) as usize),
                Some(Column::Known(_))
            )
        }
    }

    pub fn is_abandoned(&self, index: u64) -> bool {
        self.abandoned.contains(&index)
    }

    /// Payload of a delivered packet (kept only when payloads are non-empty).
    pub fn delivered_payload(&self, index: u64) -> Option<&[u8]> {
        if self.payload_len == 0 {
            return (index < self.origin && !self.abandoned.contains(&index)).then_some(&[]);
        }
        self.delivered_payloads
            .get(index.checked_sub(1)? as usize)
            .filter(|_| !self.abandoned.contains(&index))
            .map(Vec::as_slice)
    }

    /// Degrees of freedom held for packets `first..=last`, counting delivered ones.
    pub fn dof_in(&self, first: u64, last: u64) -> u64 {
        let mut dof = 0;
        let below = last.min(self.origin.saturating_sub(1));
        if below >= first {
            dof += below - first + 1;
            dof -= self.abandoned.range(first..=below).count() as u64;
        }
        let lo = first.max(self.origin);
        for index in lo..=last {
            match self.window.get((index - self.origin) as usize) {
                Some(Column::Known(_)) => dof += 1,
                Some(Column::Unknown) => {
                    if self.rows.contains_key(&index) {
                        dof += 1;
                    }
                }
                None => break,
            }
        }
        dof
    }

    fn ensure_window(&mut self, end: u64) {
        while self.origin + (self.window.len() as u64) < end {
            self.window.push_back(Column::Unknown);
        }
    }

    fn slot(&self, index: u64) -> usize {
        (index - self.origin) as usize
    }

    /// Absorbs one received packet and returns every packet that became deliverable.
    ///
    /// Deliveries are stamped with `slot`. Packets that add no rank are dropped.
    pub fn ingest(
        &mut self,
        pkt: &CodedPacket,
        slot: u64,
    ) -> Result<Vec<DeliveryEvent>, CodingError> {
        if pkt.payload.len() != self.payload_len {
            return Err(CodingError::PayloadLength {
                expected: self.payload_len,
                got: pkt.payload.len(),
            });
        }
        let coeffs = &pkt.coeffs;
        let (start, end) = (coeffs.origin(), coeffs.end());
        let finished_end = end.min(self.origin);

        if start < finished_end
            && self
                .abandoned
                .range(start..finished_end)
                .any(|&i| coeffs.get(i) != 0)
        {
            self.discarded += 1;
            return Ok(Vec::new());
        }

        let mut payload = pkt.payload.clone();
        if self.payload_len > 0 {
            for index in start..finished_end {
                let a = coeffs.get(index);
                if a != 0 {
                    self.field
                        .axpy(&mut payload, a, &self.delivered_payloads[index as usize - 1]);
                }
            }
        }
        if end <= self.origin {
            return Ok(Vec::new());
        }

        self.ensure_window(end);
        let lo = start.max(self.origin);
        let hi = self.origin + self.window.len() as u64;
        let mut dense = vec![0u8; (hi - lo) as usize];
        dense[..(end - lo) as usize].copy_from_slice(&coeffs.coeffs()[(lo - start) as usize..]);

        // Left-to-right sweep. Subtracting a pivot row only touches columns to its
        // right, so one pass leaves non-zeros only on unknown non-pivot columns.
        for offset in 0..dense.len() {
            let a = dense[offset];
            if a == 0 {
                continue;
            }
            let col = lo + offset as u64;
            match &self.window[self.slot(col)] {
                Column::Known(p) => {
                    self.field.axpy(&mut payload, a, p);
                    dense[offset] = 0;
                }
                Column::Unknown => {
                    if let Some(row) = self.rows.get(&col) {
                        for &(c, v) in &row.entries {
                            dense[(c - lo) as usize] ^= self.field.mul(a, v);
                        }
                        self.field.axpy(&mut payload, a, &row.payload);
                    }
                }
            }
        }

        let Some(first) = dense.iter().position(|&a| a != 0) else {
            return Ok(Vec::new());
        };
        let pivot = lo + first as u64;
        let inv = self.field.inv(dense[first])?;
        self.field.scale(&mut dense[first..], inv);
        self.field.scale(&mut payload, inv);
        let new_row = Row {
            entries: dense[first..]
                .iter()
                .enumerate()
                .filter(|(_, &a)| a != 0)
                .map(|(i, &a)| (pivot + i as u64, a))
                .collect(),
            payload,
        };

        // Clear the new pivot column from rows above it.
        let mut collapsed = Vec::new();
        let field = self.field;
        for (&p, row) in self.rows.range_mut(..pivot) {
            let a = row.coeff(pivot);
            if a != 0 {
                row.add_scaled(field, a, &new_row);
                if row.entries.len() == 1 {
                    collapsed.push(p);
                }
            }
        }
        if new_row.entries.len() == 1 {
            self.mark_known(pivot, new_row.payload);
        } else {
            self.rows.insert(pivot, new_row);
        }
        for p in collapsed {
            let row = self.rows.remove(&p).expect("collapsed row exists");
            self.mark_known(p, row.payload);
        }

        Ok(self.release(slot))
    }

    fn mark_known(&mut self, index: u64, payload: Vec<u8>) {
        let slot = self.slot(index);
        debug_assert!(matches!(self.window[slot], Column::Unknown));
        self.window[slot] = Column::Known(payload);
        self.known += 1;
    }

    fn release(&mut self, slot: u64) -> Vec<DeliveryEvent> {
        let mut events = Vec::new();
        while let Some(Column::Known(_)) = self.window.front() {
            let Some(Column::Known(payload)) = self.window.pop_front() else {
                unreachable!()
            };
            if self.payload_len > 0 {
                self.delivered_payloads.push(payload);
            }
            events.push(DeliveryEvent {
                packet_index: self.origin,
                delivery_slot: slot,
            });
            self.known -= 1;
            self.delivered += 1;
            self.origin += 1;
        }
        events
    }

    /// Gives up on every undecoded packet up to `last`, delivering decoded ones in
    /// order. Returns the deliveries (including any later packets this unblocks) and
    /// the abandoned indices.
    pub fn abandon_through(&mut self, last: u64, slot: u64) -> (Vec<DeliveryEvent>, Vec<u64>) {
        let mut events = Vec::new();
        let mut erased = Vec::new();
        if last < self.origin {
            return (events, erased);
        }
        self.ensure_window(last + 1);
        let dropped: Vec<u64> = self.rows.range(..=last).map(|(&p, _)| p).collect();
        for p in dropped {
            self.rows.remove(&p);
        }
        while self.origin <= last {
            match self.window.pop_front().expect("window covers abandoned range") {
                Column::Known(payload) => {
                    if self.payload_len > 0 {
                        self.delivered_payloads.push(payload);
                    }
                    events.push(DeliveryEvent {
                        packet_index: self.origin,
                        delivery_slot: slot,
                    });
                    self.known -= 1;
                    self.delivered += 1;
                }
                Column::Unknown => {
                    if self.payload_len > 0 {
                        self.delivered_payloads.push(Vec::new());
                    }
                    self.abandoned.insert(self.origin);
                    erased.push(self.origin);
                }
            }
            self.origin += 1;
        }
        events.extend(self.release(slot));
        (events, erased)
    }
}

/// Result of closing a generation in unreliable mode.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlushOutcome {
    pub deliveries: Vec<DeliveryEvent>,
    pub erased: Vec<u64>,
}

/// [`Decoder`] plus per-generation bookkeeping for the block code.
pub struct GenerationDecoder {
    inner: Decoder,
    k: u64,
    total: u64,
    coded_per_generation: u64,
    observed: Vec<u64>,
    flushed: Vec<bool>,
}

impl GenerationDecoder {
    pub fn new(
        field: &'static GaloisField,
        payload_len: usize,
        k: u64,
        total: u64,
        coded_per_generation: u64,
    ) -> GenerationDecoder {
        let generations = generation_count(k, total) as usize;
        GenerationDecoder {
            inner: Decoder::new(field, payload_len),
            k,
            total,
            coded_per_generation,
            observed: vec![0; generations + 1],
            flushed: vec![false; generations + 1],
        }
    }

    pub fn decoder(&self) -> &Decoder {
        &self.inner
    }

    pub fn generations(&self) -> u32 {
        (self.observed.len() - 1) as u32
    }

    pub fn bounds(&self, generation: u32) -> (u64, u64) {
        generation_bounds(generation, self.k, self.total)
    }

    pub fn size(&self, generation: u32) -> u64 {
        let (first, last) = self.bounds(generation);
        last - first + 1
    }

    /// Transmissions scheduled for the generation's initial round.
    pub fn scheduled(&self, generation: u32) -> u64 {
        self.size(generation) + self.coded_per_generation
    }

    pub fn ingest(
        &mut self,
        pkt: &CodedPacket,
        slot: u64,
    ) -> Result<Vec<DeliveryEvent>, CodingError> {
        self.inner.ingest(pkt, slot)
    }

    /// Records that one initial-round transmission of `generation` arrived or was erased.
    pub fn observe(&mut self, generation: u32) {
        if let Some(seen) = self.observed.get_mut(generation as usize) {
            *seen += 1;
        }
    }

    pub fn dof(&self, generation: u32) -> u64 {
        let (first, last) = self.bounds(generation);
        self.inner.dof_in(first, last)
    }

    pub fn deficit(&self, generation: u32) -> u64 {
        self.size(generation) - self.dof(generation)
    }

    pub fn is_decoded(&self, generation: u32) -> bool {
        self.deficit(generation) == 0
    }

    /// Closes a generation: decoded ones are delivered whole, otherwise only the packets
    /// received uncoded are delivered and the rest are reported erased.
    pub fn flush_generation(
        &mut self,
        generation: u32,
        slot: u64,
    ) -> Result<FlushOutcome, CodingError> {
        if generation == 0 || generation > self.generations() {
            return Err(CodingError::UnknownGeneration(generation));
        }
        let scheduled = self.scheduled(generation);
        let observed = self.observed[generation as usize];
        if observed < scheduled {
            return Err(CodingError::GenerationOpen {
                generation,
                observed,
                scheduled,
            });
        }
        self.flushed[generation as usize] = true;
        let (_, last) = self.bounds(generation);
        let (deliveries, erased) = self.inner.abandon_through(last, slot);
        Ok(FlushOutcome { deliveries, erased })
    }
}
