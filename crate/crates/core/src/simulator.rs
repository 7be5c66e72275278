//! Time-slotted single-link simulation.
//!
//! Every slot the source may emit one packet, the channel erases it or not, and the
//! sink reacts. Slots are counted from 1. The propagation delay is not simulated
//! slot by slot: a packet sent in slot `t` is processed by the sink "in slot `t`" and
//! the one-way delay `t_p` is added when delays are reported. Feedback produced while
//! handling slot `t` reaches the source after a full round trip and is acted on from
//! slot `t + round(RTT/t_s) + 1`.
//!
//! Transmission schemes implement [`Scheme`], which builds a matched [`Source`] /
//! [`Sink`] pair. Schemes are looked up by name in a [`SchemeRegistry`]; the built-in
//! registry holds `generation`, `sliding-window` and `arq`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{derive_params, ChannelError, ErasureChannel, GilbertChannel, GilbertParams};
use crate::coding::{
    CodedPacket, CodingError, Decoder, DeliveryEvent, Emission, FeedbackMessage,
    GenerationDecoder, GenerationEncoder, InfoSource, PacketKind, PatternSource, Redundancy,
    SlidingWindowEncoder,
};
use crate::derive_seed;
use crate::galois::GaloisField;
use crate::metrics::{self, DelayStats, MetricsError, SlotDelayAccumulator};

const CHANNEL_STREAM: u64 = 1;
const CODING_STREAM: u64 = 2;
const PAYLOAD_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Reliable,
    Unreliable,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Reliable => "reliable",
            Mode::Unreliable => "unreliable",
        })
    }
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Mode, ConfigError> {
        match s {
            "reliable" => Ok(Mode::Reliable),
            "unreliable" => Ok(Mode::Unreliable),
            other => Err(ConfigError::invalid(
                "mode",
                format!("{other:?} is not one of reliable, unreliable"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unknown scheme {0:?}")]
    UnknownScheme(String),
    #[error("scheme {scheme} does not support {mode} mode")]
    UnsupportedMode { scheme: String, mode: Mode },
    #[error(
        "redundancy {redundancy} does not exceed 1/(1-pi_B) = {bound:.4}; \
         reliable sliding-window delivery is not guaranteed"
    )]
    Capacity { redundancy: f64, bound: f64 },
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

impl ConfigError {
    pub fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("contract violation: {0}")]
    Coding(#[from] CodingError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("run exceeded {0} slots without finishing")]
    SlotLimit(u64),
}

/// One simulated link and stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub scheme: String,
    pub mode: Mode,
    pub redundancy: Redundancy,
    /// Generation size `k`; ignored by schemes without generations.
    pub generation_size: u64,
    pub stream_len: u64,
    pub slot_ms: f64,
    pub rtt_ms: f64,
    pub pi_b: f64,
    pub mean_burst: f64,
    /// Field size exponent `q` of GF(2^q).
    pub field_bits: u8,
    /// Payload bytes per packet; 0 simulates coefficients only.
    #[serde(default)]
    pub payload_len: usize,
    pub seed: u64,
    /// Abort the run after this many slots; `None` picks a generous bound.
    #[serde(default)]
    pub max_slots: Option<u64>,
}

impl SimConfig {
    /// Satellite-link defaults: RTT 200 ms, 1.2 ms slots, 5% loss, i.i.d., GF(2^8).
    pub fn new(scheme: &str) -> SimConfig {
        SimConfig {
            scheme: scheme.to_string(),
            mode: Mode::Reliable,
            redundancy: Redundancy::new(5, 4).expect("valid ratio"),
            generation_size: 16,
            stream_len: 10_000,
            slot_ms: 1.2,
            rtt_ms: 200.0,
            pi_b: 0.05,
            mean_burst: 1.0,
            field_bits: 8,
            payload_len: 0,
            seed: 0,
            max_slots: None,
        }
    }

    /// One-way propagation delay `t_p = RTT/2`.
    pub fn propagation_ms(&self) -> f64 {
        self.rtt_ms / 2.0
    }

    /// Round trip expressed in slots.
    pub fn feedback_slots(&self) -> u64 {
        (self.rtt_ms / self.slot_ms).round() as u64
    }

    pub fn gilbert_params(&self) -> Result<GilbertParams, ConfigError> {
        if self.pi_b == 0.0 {
            return Ok(GilbertParams::lossless());
        }
        Ok(derive_params(self.pi_b, self.mean_burst)?)
    }

    pub fn field(&self) -> Result<&'static GaloisField, ConfigError> {
        GaloisField::get(self.field_bits).map_err(|e| ConfigError::invalid("field_bits", e.to_string()))
    }

    /// Scheme-independent range checks.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stream_len == 0 {
            return Err(ConfigError::invalid("stream_len", "must be at least 1"));
        }
        if self.stream_len > u32::MAX as u64 {
            return Err(ConfigError::invalid("stream_len", "too large"));
        }
        if !(self.slot_ms > 0.0 && self.slot_ms.is_finite()) {
            return Err(ConfigError::invalid("slot_ms", "must be positive"));
        }
        if !(self.rtt_ms >= 0.0 && self.rtt_ms.is_finite()) {
            return Err(ConfigError::invalid("rtt_ms", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.pi_b) {
            return Err(ConfigError::invalid("pi_b", "must lie in [0, 1)"));
        }
        if !(self.mean_burst >= 1.0 && self.mean_burst.is_finite()) {
            return Err(ConfigError::invalid("mean_burst", "must be at least 1"));
        }
        if self.generation_size == 0 {
            return Err(ConfigError::invalid("generation_size", "must be at least 1"));
        }
        self.field()?;
        self.gilbert_params()?;
        Ok(())
    }

    fn slot_limit(&self) -> u64 {
        self.max_slots.unwrap_or_else(|| {
            let nominal = self.stream_len as f64 * self.redundancy.as_f64();
            let rounds = (self.feedback_slots() + 1) as f64;
            (64.0 * nominal + 64.0 * rounds * (1.0 + nominal.sqrt()) + 100_000.0) as u64
        })
    }
}

/// Sink-to-source messages. They travel over a lossless channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feedback {
    /// End-of-round report for one generation.
    Generation(FeedbackMessage),
    /// Outcome of one uncoded transmission.
    Ack { index: u64, erased: bool },
    /// Everything has been delivered.
    Complete,
}

/// What the sink produced while handling one slot.
#[derive(Debug, Clone, Default)]
pub struct SinkOutput {
    pub deliveries: Vec<DeliveryEvent>,
    pub erased: Vec<u64>,
    pub feedback: Vec<Feedback>,
}

impl SinkOutput {
    fn clear(&mut self) {
        self.deliveries.clear();
        self.erased.clear();
        self.feedback.clear();
    }
}

pub trait Source: Send {
    /// Packet for the current slot; `None` leaves the slot idle.
    fn next_emission(&mut self) -> Option<Emission>;

    fn on_feedback(&mut self, feedback: &Feedback) -> Result<(), SimError>;

    /// No further emissions will ever be produced without feedback.
    fn exhausted(&self) -> bool;

    fn retransmissions(&self) -> u64;

    /// The configuration was accepted but the scheme runs in a degenerate form.
    fn degenerate(&self) -> bool {
        false
    }
}

pub trait Sink: Send {
    /// Handles the packet sent in `slot`. The emission header is visible even when the
    /// packet was erased, as sequence numbers would make it.
    fn on_slot(
        &mut self,
        slot: u64,
        emission: &Emission,
        erased: bool,
        out: &mut SinkOutput,
    ) -> Result<(), SimError>;

    /// End of an unreliable session: resolve everything still pending.
    fn close(&mut self, slot: u64, out: &mut SinkOutput) -> Result<(), SimError>;
}

pub struct Endpoints {
    pub source: Box<dyn Source>,
    pub sink: Box<dyn Sink>,
}

/// Shared inputs handed to [`Scheme::build`].
pub struct BuildContext {
    pub field: &'static GaloisField,
    pub stream: Arc<dyn InfoSource>,
    pub coding_seed: u64,
}

pub trait Scheme: Send + Sync {
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    /// Scheme-specific checks on top of [`SimConfig::validate`].
    fn validate(&self, cfg: &SimConfig) -> Result<(), ConfigError>;

    fn build(&self, cfg: &SimConfig, ctx: BuildContext) -> Result<Endpoints, SimError>;
}

/// Name → scheme lookup.
#[derive(Clone, Default)]
pub struct SchemeRegistry {
    schemes: BTreeMap<String, Arc<dyn Scheme>>,
}

impl SchemeRegistry {
    pub fn empty() -> SchemeRegistry {
        SchemeRegistry::default()
    }

    pub fn with_builtin() -> SchemeRegistry {
        let mut r = SchemeRegistry::empty();
        r.register(Arc::new(GenerationScheme));
        r.register(Arc::new(SlidingWindowScheme));
        r.register(Arc::new(ArqScheme));
        r
    }

    /// Process-wide registry of the built-in schemes.
    pub fn builtin() -> &'static SchemeRegistry {
        static BUILTIN: OnceLock<SchemeRegistry> = OnceLock::new();
        BUILTIN.get_or_init(SchemeRegistry::with_builtin)
    }

    /// Adds a scheme, replacing any previous one with the same name.
    pub fn register(&mut self, scheme: Arc<dyn Scheme>) {
        self.schemes.insert(scheme.name().to_string(), scheme);
    }

    pub fn get(&self, name: &str) -> Result<&Arc<dyn Scheme>, ConfigError> {
        self.schemes
            .get(name)
            .ok_or_else(|| ConfigError::UnknownScheme(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.schemes.keys().map(String::as_str)
    }

    /// Full validation of a configuration against its scheme.
    pub fn validate(&self, cfg: &SimConfig) -> Result<(), ConfigError> {
        cfg.validate()?;
        self.get(&cfg.scheme)?.validate(cfg)
    }

    pub fn run(&self, cfg: &SimConfig) -> Result<RunMetrics, SimError> {
        let params = cfg.gilbert_params()?;
        let mut channel = GilbertChannel::new(params, derive_seed(cfg.seed, &[CHANNEL_STREAM]));
        self.run_with_channel(cfg, &mut channel, RunOptions::default())
    }

    /// Runs `cfg` over a caller-supplied channel; the channel fields of `cfg` are
    /// validated but otherwise ignored.
    pub fn run_with_channel(
        &self,
        cfg: &SimConfig,
        channel: &mut dyn ErasureChannel,
        options: RunOptions,
    ) -> Result<RunMetrics, SimError> {
        self.validate(cfg)?;
        let scheme = self.get(&cfg.scheme)?;
        let stream: Arc<dyn InfoSource> = Arc::new(PatternSource {
            len: cfg.stream_len,
            payload_len: cfg.payload_len,
            seed: derive_seed(cfg.seed, &[PAYLOAD_STREAM]),
        });
        let ctx = BuildContext {
            field: cfg.field()?,
            stream,
            coding_seed: derive_seed(cfg.seed, &[CODING_STREAM]),
        };
        let endpoints = scheme.build(cfg, ctx)?;
        simulate(cfg, endpoints, channel, options)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep a per-slot record of every transmission.
    pub trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelaySample {
    pub index: u64,
    pub first_tx_slot: u64,
    pub delivery_slot: u64,
}

impl DelaySample {
    pub fn slots(&self) -> u64 {
        self.delivery_slot - self.first_tx_slot
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub slot: u64,
    pub kind: PacketKind,
    /// Lowest information index combined (the index itself when uncoded).
    pub first: u64,
    /// Highest information index combined.
    pub last: u64,
    pub generation: Option<u32>,
    pub retransmission: bool,
    pub erased: bool,
}

/// Outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scheme: String,
    pub mode: Mode,
    pub slot_ms: f64,
    pub propagation_ms: f64,
    /// One per delivered packet, in delivery order.
    pub delay_samples: Vec<DelaySample>,
    pub delivered_count: u64,
    pub erased_count: u64,
    /// Transmissions that survived the channel.
    pub sink_received_count: u64,
    /// `|𝒫|`.
    pub dof_needed: u64,
    pub retransmission_count: u64,
    pub transmissions: u64,
    pub duration_slots: u64,
    pub degenerate: bool,
    pub trace: Option<Vec<TraceEntry>>,
}

impl RunMetrics {
    /// Delay of one sample in milliseconds.
    pub fn delay_ms(&self, sample: &DelaySample) -> f64 {
        sample.slots() as f64 * self.slot_ms + self.propagation_ms
    }

    /// `(packet index, delay ms)` for every delivered packet.
    pub fn delays_ms(&self) -> Vec<(u64, f64)> {
        self.delay_samples
            .iter()
            .map(|s| (s.index, self.delay_ms(s)))
            .collect()
    }

    pub fn delay_accumulator(&self) -> SlotDelayAccumulator {
        let mut acc = SlotDelayAccumulator::default();
        self.delay_samples.iter().for_each(|s| acc.push(s.slots()));
        acc
    }

    pub fn delay_stats(&self) -> Result<DelayStats, MetricsError> {
        self.delay_accumulator()
            .stats_ms(self.slot_ms, self.propagation_ms)
    }

    pub fn efficiency(&self) -> Result<f64, MetricsError> {
        metrics::efficiency(self.dof_needed, self.sink_received_count)
    }

    pub fn per(&self) -> Result<f64, MetricsError> {
        metrics::per(self.erased_count, self.dof_needed)
    }
}

/// Runs `cfg` with the built-in schemes and a Gilbert channel seeded from `cfg.seed`.
pub fn run_simulation(cfg: &SimConfig) -> Result<RunMetrics, SimError> {
    SchemeRegistry::builtin().run(cfg)
}

/// The idealised selective-repeat ARQ reference run.
pub fn arq_baseline(cfg: &SimConfig) -> Result<RunMetrics, SimError> {
    if cfg.scheme != ArqScheme.name() {
        return Err(ConfigError::invalid("scheme", "arq_baseline requires scheme = arq").into());
    }
    run_simulation(cfg)
}

/// A run without delivery guarantees.
pub fn unreliable_session(cfg: &SimConfig) -> Result<RunMetrics, SimError> {
    if cfg.mode != Mode::Unreliable {
        return Err(ConfigError::invalid("mode", "unreliable_session requires mode = unreliable").into());
    }
    run_simulation(cfg)
}

fn simulate(
    cfg: &SimConfig,
    endpoints: Endpoints,
    channel: &mut dyn ErasureChannel,
    options: RunOptions,
) -> Result<RunMetrics, SimError> {
    let Endpoints {
        mut source,
        mut sink,
    } = endpoints;
    let total = cfg.stream_len;
    let feedback_delay = cfg.feedback_slots();
    let limit = cfg.slot_limit();

    let mut first_tx = vec![0u64; total as usize + 1];
    let mut settled = vec![false; total as usize + 1];
    let mut pending: VecDeque<(u64, Feedback)> = VecDeque::new();
    let mut out = SinkOutput::default();
    let mut trace = options.trace.then(Vec::new);
    let mut metrics = RunMetrics {
        scheme: cfg.scheme.clone(),
        mode: cfg.mode,
        slot_ms: cfg.slot_ms,
        propagation_ms: cfg.propagation_ms(),
        delay_samples: Vec::with_capacity(total as usize),
        delivered_count: 0,
        erased_count: 0,
        sink_received_count: 0,
        dof_needed: total,
        retransmission_count: 0,
        transmissions: 0,
        duration_slots: 0,
        degenerate: source.degenerate(),
        trace: None,
    };

    let mut slot = 0u64;
    let mut last_tx_slot = 0u64;
    while metrics.delivered_count + metrics.erased_count < total {
        slot += 1;
        if slot > limit {
            return Err(SimError::SlotLimit(limit));
        }
        while pending.front().is_some_and(|(at, _)| *at <= slot) {
            let (_, fb) = pending.pop_front().expect("front exists");
            source.on_feedback(&fb)?;
        }
        let erased = channel.step();
        let Some(emission) = source.next_emission() else {
            if cfg.mode == Mode::Unreliable && source.exhausted() {
                out.clear();
                sink.close(last_tx_slot, &mut out)?;
                absorb(&mut metrics, &out, &first_tx, &mut settled, total)?;
                slot = last_tx_slot;
                break;
            }
            if pending.is_empty() && source.exhausted() {
                return Err(SimError::Contract(format!(
                    "source idle with nothing in flight after {} deliveries",
                    metrics.delivered_count
                )));
            }
            continue;
        };

        metrics.transmissions += 1;
        last_tx_slot = slot;
        if !erased {
            metrics.sink_received_count += 1;
        }
        let coeffs = &emission.packet.coeffs;
        if let Some(index) = emission.packet.info_index() {
            if index == 0 || index > total {
                return Err(SimError::Contract(format!("packet index {index} out of range")));
            }
            if first_tx[index as usize] == 0 {
                first_tx[index as usize] = slot;
            }
        }
        if let Some(t) = trace.as_mut() {
            t.push(TraceEntry {
                slot,
                kind: emission.packet.kind,
                first: coeffs.origin(),
                last: coeffs.end() - 1,
                generation: emission.packet.generation_id,
                retransmission: emission.retransmission,
                erased,
            });
        }

        out.clear();
        sink.on_slot(slot, &emission, erased, &mut out)?;
        absorb(&mut metrics, &out, &first_tx, &mut settled, total)?;
        for fb in out.feedback.drain(..) {
            pending.push_back((slot + feedback_delay + 1, fb));
        }
    }

    metrics.duration_slots = slot;
    metrics.retransmission_count = source.retransmissions();
    metrics.trace = trace;
    Ok(metrics)
}

fn absorb(
    metrics: &mut RunMetrics,
    out: &SinkOutput,
    first_tx: &[u64],
    settled: &mut [bool],
    total: u64,
) -> Result<(), SimError> {
    let mut settle = |index: u64| -> Result<(), SimError> {
        if index == 0 || index > total || settled[index as usize] {
            return Err(SimError::Contract(format!(
                "packet {index} settled twice or out of range"
            )));
        }
        settled[index as usize] = true;
        Ok(())
    };
    for d in &out.deliveries {
        settle(d.packet_index)?;
        let first = first_tx[d.packet_index as usize];
        if first == 0 {
            return Err(SimError::Contract(format!(
                "packet {} delivered before it was sent",
                d.packet_index
            )));
        }
        metrics.delay_samples.push(DelaySample {
            index: d.packet_index,
            first_tx_slot: first,
            delivery_slot: d.delivery_slot,
        });
        metrics.delivered_count += 1;
    }
    for &e in &out.erased {
        settle(e)?;
        metrics.erased_count += 1;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Generation-based coding.

pub struct GenerationScheme;

impl Scheme for GenerationScheme {
    fn name(&self) -> &'static str {
        "generation"
    }

    fn description(&self) -> &'static str {
        "block RLNC: k uncoded packets then ceil(k(R-1)) coded ones per generation; \
         reliable mode repairs failed generations from per-round feedback"
    }

    fn validate(&self, _cfg: &SimConfig) -> Result<(), ConfigError> {
        Ok(())
    }

    fn build(&self, cfg: &SimConfig, ctx: BuildContext) -> Result<Endpoints, SimError> {
        let encoder = GenerationEncoder::new(
            ctx.field,
            ctx.stream.clone(),
            cfg.generation_size,
            cfg.redundancy,
            ctx.coding_seed,
        )?;
        let decoder = GenerationDecoder::new(
            ctx.field,
            cfg.payload_len,
            cfg.generation_size,
            cfg.stream_len,
            encoder.coded_per_generation(),
        );
        Ok(Endpoints {
            source: Box::new(GenerationSource { encoder }),
            sink: Box::new(GenerationSink {
                decoder,
                mode: cfg.mode,
            }),
        })
    }
}

struct GenerationSource {
    encoder: GenerationEncoder,
}

impl Source for GenerationSource {
    fn next_emission(&mut self) -> Option<Emission> {
        self.encoder.next_packet()
    }

    fn on_feedback(&mut self, feedback: &Feedback) -> Result<(), SimError> {
        if let Feedback::Generation(msg) = feedback {
            self.encoder.handle_feedback(msg)?;
        }
        Ok(())
    }

    fn exhausted(&self) -> bool {
        self.encoder.is_idle()
    }

    fn retransmissions(&self) -> u64 {
        self.encoder.retransmissions()
    }
}

struct GenerationSink {
    decoder: GenerationDecoder,
    mode: Mode,
}

impl Sink for GenerationSink {
    fn on_slot(
        &mut self,
        slot: u64,
        emission: &Emission,
        erased: bool,
        out: &mut SinkOutput,
    ) -> Result<(), SimError> {
        let generation = emission
            .packet
            .generation_id
            .ok_or_else(|| SimError::Contract("generation packet without generation id".into()))?;
        if !erased {
            out.deliveries
                .extend(self.decoder.ingest(&emission.packet, slot)?);
        }
        if emission.round == 0 {
            self.decoder.observe(generation);
        }
        if emission.closes_round {
            match self.mode {
                Mode::Reliable => out.feedback.push(Feedback::Generation(FeedbackMessage {
                    generation,
                    round: emission.round,
                    deficit: self.decoder.deficit(generation),
                })),
                Mode::Unreliable => {
                    let flushed = self.decoder.flush_generation(generation, slot)?;
                    out.deliveries.extend(flushed.deliveries);
                    out.erased.extend(flushed.erased);
                }
            }
        }
        Ok(())
    }

    fn close(&mut self, slot: u64, out: &mut SinkOutput) -> Result<(), SimError> {
        for generation in 1..=self.decoder.generations() {
            let (_, last) = self.decoder.bounds(generation);
            if last >= self.decoder.decoder().window_origin() {
                let flushed = self.decoder.flush_generation(generation, slot)?;
                out.deliveries.extend(flushed.deliveries);
                out.erased.extend(flushed.erased);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Sliding-window coding.

pub struct SlidingWindowScheme;

impl Scheme for SlidingWindowScheme {
    fn name(&self) -> &'static str {
        "sliding-window"
    }

    fn description(&self) -> &'static str {
        "systematic sliding window: one coded packet over every packet sent so far \
         after each run of uncoded ones; no feedback except a terminal acknowledgement"
    }

    fn validate(&self, cfg: &SimConfig) -> Result<(), ConfigError> {
        let r = cfg.redundancy.as_f64();
        if cfg.mode == Mode::Reliable && r * (1.0 - cfg.pi_b) <= 1.0 {
            return Err(ConfigError::Capacity {
                redundancy: r,
                bound: 1.0 / (1.0 - cfg.pi_b),
            });
        }
        Ok(())
    }

    fn build(&self, cfg: &SimConfig, ctx: BuildContext) -> Result<Endpoints, SimError> {
        let encoder = SlidingWindowEncoder::new(ctx.field, ctx.stream, cfg.redundancy, ctx.coding_seed)
            .with_end_flush(cfg.mode == Mode::Reliable);
        Ok(Endpoints {
            source: Box::new(SlidingWindowSource { encoder }),
            sink: Box::new(SlidingWindowSink {
                decoder: Decoder::new(ctx.field, cfg.payload_len),
                total: cfg.stream_len,
                acknowledged: false,
            }),
        })
    }
}

struct SlidingWindowSource {
    encoder: SlidingWindowEncoder,
}

impl Source for SlidingWindowSource {
    fn next_emission(&mut self) -> Option<Emission> {
        self.encoder.next_packet()
    }

    fn on_feedback(&mut self, feedback: &Feedback) -> Result<(), SimError> {
        if let Feedback::Complete = feedback {
            self.encoder.stop();
        }
        Ok(())
    }

    fn exhausted(&self) -> bool {
        self.encoder.schedule_done()
    }

    fn retransmissions(&self) -> u64 {
        self.encoder.flush_sent()
    }

    fn degenerate(&self) -> bool {
        self.encoder.is_degenerate()
    }
}

struct SlidingWindowSink {
    decoder: Decoder,
    total: u64,
    acknowledged: bool,
}

impl Sink for SlidingWindowSink {
    fn on_slot(
        &mut self,
        slot: u64,
        emission: &Emission,
        erased: bool,
        out: &mut SinkOutput,
    ) -> Result<(), SimError> {
        if !erased {
            out.deliveries
                .extend(self.decoder.ingest(&emission.packet, slot)?);
        }
        if !self.acknowledged && self.decoder.delivered_through() == self.total {
            self.acknowledged = true;
            out.feedback.push(Feedback::Complete);
        }
        Ok(())
    }

    fn close(&mut self, slot: u64, out: &mut SinkOutput) -> Result<(), SimError> {
        let (deliveries, erased) = self.decoder.abandon_through(self.total, slot);
        out.deliveries.extend(deliveries);
        out.erased.extend(erased);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Idealised selective-repeat ARQ.

pub struct ArqScheme;

impl Scheme for ArqScheme {
    fn name(&self) -> &'static str {
        "arq"
    }

    fn description(&self) -> &'static str {
        "idealised selective repeat: uncoded packets, per-slot acknowledgements, \
         each loss resent as soon as its report arrives, no window limit"
    }

    fn validate(&self, cfg: &SimConfig) -> Result<(), ConfigError> {
        if cfg.mode != Mode::Reliable {
            return Err(ConfigError::UnsupportedMode {
                scheme: self.name().to_string(),
                mode: cfg.mode,
            });
        }
        Ok(())
    }

    fn build(&self, cfg: &SimConfig, ctx: BuildContext) -> Result<Endpoints, SimError> {
        Ok(Endpoints {
            source: Box::new(ArqSource {
                stream: ctx.stream,
                next_new: 1,
                total: cfg.stream_len,
                resend: VecDeque::new(),
                retransmissions: 0,
            }),
            sink: Box::new(ArqSink {
                decoder: Decoder::new(ctx.field, cfg.payload_len),
            }),
        })
    }
}

struct ArqSource {
    stream: Arc<dyn InfoSource>,
    next_new: u64,
    total: u64,
    resend: VecDeque<u64>,
    retransmissions: u64,
}

impl Source for ArqSource {
    fn next_emission(&mut self) -> Option<Emission> {
        let (index, retransmission) = if let Some(i) = self.resend.pop_front() {
            self.retransmissions += 1;
            (i, true)
        } else if self.next_new <= self.total {
            self.next_new += 1;
            (self.next_new - 1, false)
        } else {
            return None;
        };
        Some(Emission {
            packet: CodedPacket::uncoded(index, self.stream.payload(index), None),
            round: 0,
            closes_round: true,
            retransmission,
        })
    }

    fn on_feedback(&mut self, feedback: &Feedback) -> Result<(), SimError> {
        if let Feedback::Ack {
            index,
            erased: true,
        } = *feedback
        {
            self.resend.push_back(index);
        }
        Ok(())
    }

    fn exhausted(&self) -> bool {
        self.resend.is_empty() && self.next_new > self.total
    }

    fn retransmissions(&self) -> u64 {
        self.retransmissions
    }
}

struct ArqSink {
    decoder: Decoder,
}

impl Sink for ArqSink {
    fn on_slot(
        &mut self,
        slot: u64,
        emission: &Emission,
        erased: bool,
        out: &mut SinkOutput,
    ) -> Result<(), SimError> {
        let index = emission
            .packet
            .info_index()
            .ok_or_else(|| SimError::Contract("ARQ carries uncoded packets only".into()))?;
        if !erased {
            out.deliveries
                .extend(self.decoder.ingest(&emission.packet, slot)?);
        }
        out.feedback.push(Feedback::Ack { index, erased });
        Ok(())
    }

    fn close(&mut self, _slot: u64, _out: &mut SinkOutput) -> Result<(), SimError> {
        Err(SimError::Contract("ARQ has no unreliable session end".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ScriptedChannel;

    fn lossless(scheme: &str, mode: Mode) -> SimConfig {
        SimConfig {
            mode,
            pi_b: 0.0,
            stream_len: 40,
            generation_size: 4,
            ..SimConfig::new(scheme)
        }
    }

    #[test]
    fn lossless_runs_deliver_at_propagation_delay() {
        for scheme in ["generation", "sliding-window", "arq"] {
            let mut cfg = lossless(scheme, Mode::Reliable);
            if scheme == "sliding-window" {
                // Capacity rule needs R > 1 on a lossless channel.
                cfg.redundancy = Redundancy::new(5, 4).unwrap();
            }
            let m = run_simulation(&cfg).unwrap();
            assert_eq!(m.delivered_count, 40);
            for (_, d) in m.delays_ms() {
                assert!((d - 100.0).abs() < 1e-9, "{scheme}: {d}");
            }
        }
    }

    #[test]
    fn registry_lookup() {
        let reg = SchemeRegistry::builtin();
        assert_eq!(
            reg.names().collect::<Vec<_>>(),
            ["arq", "generation", "sliding-window"]
        );
        assert!(matches!(
            reg.get("fountain"),
            Err(ConfigError::UnknownScheme(_))
        ));
    }

    #[test]
    fn rejected_configs() {
        let mut cfg = SimConfig::new("sliding-window");
        cfg.redundancy = Redundancy::new(21, 20).unwrap();
        assert!(matches!(
            run_simulation(&cfg),
            Err(SimError::Config(ConfigError::Capacity { .. }))
        ));
        let mut cfg = SimConfig::new("arq");
        cfg.mode = Mode::Unreliable;
        assert!(matches!(
            run_simulation(&cfg),
            Err(SimError::Config(ConfigError::UnsupportedMode { .. }))
        ));
    }

    #[test]
    fn arq_single_loss_timeline() {
        let cfg = SimConfig {
            stream_len: 5,
            ..SimConfig::new("arq")
        };
        let mut ch = ScriptedChannel::new([1]);
        let m = SchemeRegistry::builtin()
            .run_with_channel(&cfg, &mut ch, RunOptions::default())
            .unwrap();
        let rtt = cfg.feedback_slots();
        // p1 resent in slot rtt + 2, which releases p2..p5 as well.
        for s in &m.delay_samples {
            assert_eq!(s.delivery_slot, rtt + 2);
        }
        assert_eq!(m.delay_samples[0].slots(), rtt + 1);
        assert_eq!(m.transmissions, 6);
        assert_eq!(m.retransmission_count, 1);
    }
}
