//! Experiment descriptions: figure presets, the flat TOML config format, validation.
//!
//! A config file is a single table of keys. It may name a `preset` and override any of
//! its values; without a preset, `stream_len` is mandatory. Unknown keys are rejected.
//!
//! ```toml
//! preset = "fig3"          # fig3 | fig4 | fig5 | fig6 | fig7 | custom
//! schemes = ["generation", "sliding-window", "arq"]
//! mode = "reliable"        # reliable | unreliable
//! axis = "R"               # R | k
//! values = [1.1, 1.2, 1.3]
//! levels = [1.5, 2.0]      # R values for a k sweep
//! k = 16                   # generation size for an R sweep, or "optimize"
//! k_grid = [2, 4, 8, 16, 32, 64, 128]
//! optimize_reps = 10
//! mean_burst = [1, 4, 8]
//! stream_len = 100000
//! replications = 20
//! seed = 1
//! rtt_ms = 200.0
//! slot_ms = 1.2
//! pi_b = 0.05
//! field_bits = 8
//! payload_len = 0
//! skip_infeasible = true
//! workers = 1
//! out = "fig3.csv"
//! # tandem presets only
//! erasures = [0.1, 0.1, 0.1]
//! block_size = 256
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use satnc::coding::Redundancy;
use satnc::multihop::TandemConfig;
use satnc::simulator::{Mode, SchemeRegistry, SimConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {reason}")]
pub struct SpecError {
    pub field: String,
    pub reason: String,
}

impl SpecError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> SpecError {
        SpecError {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Fig3,
        Preset::Fig4,
        Preset::Fig5,
        Preset::Fig6,
        Preset::Fig7,
        Preset::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
            Preset::Fig5 => "fig5",
            Preset::Fig6 => "fig6",
            Preset::Fig7 => "fig7",
            Preset::Custom => "custom",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Preset, SpecError> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SpecError::new("preset", format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "values")]
pub enum SweepAxis {
    #[serde(rename = "R")]
    Redundancy(Vec<Redundancy>),
    #[serde(rename = "k")]
    GenerationSize(Vec<u64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Redundancy(_) => "R",
            SweepAxis::GenerationSize(_) => "k",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Redundancy(v) => v.len(),
            SweepAxis::GenerationSize(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Settings for choosing `k` numerically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub grid: Vec<u64>,
    pub replications: u32,
    /// Also try integer points between grid neighbours of the minimum (i.i.d. only).
    pub refine: bool,
}

impl Default for OptimizeOptions {
    fn default() -> OptimizeOptions {
        OptimizeOptions {
            grid: vec![2, 4, 8, 16, 32, 64, 128],
            replications: 10,
            refine: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationK {
    Fixed(u64),
    Optimize(OptimizeOptions),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TandemSpec {
    pub erasures: [f64; 3],
    pub stream_len: u64,
    pub block_size: Option<u64>,
    pub field_bits: u8,
    pub payload_len: usize,
}

impl TandemSpec {
    pub fn config(&self, strategy: satnc::multihop::Strategy, seed: u64) -> TandemConfig {
        TandemConfig {
            erasures: self.erasures,
            stream_len: self.stream_len,
            strategy,
            block_size: self.block_size,
            field_bits: self.field_bits,
            payload_len: self.payload_len,
            seed,
        }
    }
}

/// Where a parameter value came from, for the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    /// Fixed by the figure being reproduced.
    Pinned,
    /// Chosen by this tool where the figure does not say.
    Default,
    /// Supplied in a config file or on the command line.
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub preset: Preset,
    /// Template for every run; scheme, mode, R, k, E[L] and seed are set per point.
    pub base: SimConfig,
    pub schemes: Vec<String>,
    pub mode: Mode,
    pub mean_bursts: Vec<f64>,
    pub axis: SweepAxis,
    /// Fixed R values for a k sweep; one series per level.
    pub levels: Vec<Redundancy>,
    pub generation_k: GenerationK,
    pub replications: u32,
    pub master_seed: u64,
    /// Drop (scheme, point) pairs the scheme rejects instead of aborting.
    pub skip_infeasible: bool,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub tandem: Option<TandemSpec>,
    /// Provenance of every top-level parameter.
    pub origins: BTreeMap<String, Origin>,
}

fn ratio(num: u64, den: u64) -> Redundancy {
    Redundancy::new(num, den).expect("preset ratios are >= 1")
}

fn base_config() -> SimConfig {
    SimConfig {
        stream_len: 100_000,
        rtt_ms: 200.0,
        slot_ms: 1.2,
        pi_b: 0.05,
        ..SimConfig::new("generation")
    }
}

fn default_origins(pinned: &[&str], defaults: &[&str]) -> BTreeMap<String, Origin> {
    pinned
        .iter()
        .map(|k| (k.to_string(), Origin::Pinned))
        .chain(defaults.iter().map(|k| (k.to_string(), Origin::Default)))
        .collect()
}

const COMMON_DEFAULTS: [&str; 8] = [
    "stream_len",
    "replications",
    "seed",
    "field_bits",
    "payload_len",
    "mean_burst",
    "workers",
    "skip_infeasible",
];

/// The built-in experiment for a preset.
pub fn preset(p: Preset) -> ExperimentSpec {
    let mut spec = ExperimentSpec {
        preset: p,
        base: base_config(),
        schemes: vec![
            "generation".into(),
            "sliding-window".into(),
            "arq".into(),
        ],
        mode: Mode::Reliable,
        mean_bursts: vec![1.0, 4.0, 8.0],
        axis: SweepAxis::Redundancy((21..=30).map(|i| ratio(5 * i, 100)).collect()),
        levels: Vec::new(),
        generation_k: GenerationK::Optimize(OptimizeOptions::default()),
        replications: 20,
        master_seed: 1,
        skip_infeasible: true,
        workers: 1,
        out: None,
        tandem: None,
        origins: BTreeMap::new(),
    };
    let mut defaults: Vec<&str> = COMMON_DEFAULTS.to_vec();
    match p {
        Preset::Fig3 | Preset::Fig4 => {
            defaults.extend(["values", "k", "k_grid", "optimize_reps"]);
        }
        Preset::Fig5 | Preset::Fig6 => {
            spec.mode = Mode::Unreliable;
            spec.schemes = vec!["generation".into(), "sliding-window".into()];
            spec.axis = SweepAxis::GenerationSize((1..=7).map(|e| 1u64 << e).collect());
            spec.levels = vec![ratio(3, 2), ratio(2, 1)];
            spec.generation_k = GenerationK::Fixed(16);
            defaults.extend(["values", "levels"]);
        }
        Preset::Fig7 => {
            spec.schemes = Vec::new();
            spec.mean_bursts = vec![1.0];
            spec.axis = SweepAxis::Redundancy(Vec::new());
            spec.tandem = Some(TandemSpec {
                erasures: [0.1, 0.1, 0.1],
                stream_len: 10_000,
                block_size: Some(256),
                field_bits: 8,
                payload_len: 0,
            });
            defaults = vec![
                "erasures",
                "stream_len",
                "block_size",
                "replications",
                "seed",
                "field_bits",
                "payload_len",
            ];
        }
        Preset::Custom => {
            spec.schemes = Vec::new();
            spec.axis = SweepAxis::Redundancy(Vec::new());
            spec.mean_bursts = vec![1.0];
            spec.generation_k = GenerationK::Fixed(16);
            spec.skip_infeasible = false;
        }
    }
    let pinned: &[&str] = match p {
        Preset::Fig7 | Preset::Custom => &[],
        _ => &["rtt_ms", "slot_ms", "pi_b", "schemes", "mode", "axis"],
    };
    if p != Preset::Custom {
        spec.origins = default_origins(pinned, &defaults);
    }
    spec
}

/// Raw config file contents; every key optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<String>,
    pub schemes: Option<Vec<String>>,
    pub mode: Option<String>,
    pub axis: Option<String>,
    pub values: Option<Vec<toml::Value>>,
    pub levels: Option<Vec<toml::Value>>,
    pub k: Option<toml::Value>,
    pub k_grid: Option<Vec<u64>>,
    pub optimize_reps: Option<u32>,
    pub refine: Option<bool>,
    pub mean_burst: Option<Vec<f64>>,
    pub stream_len: Option<u64>,
    pub replications: Option<u32>,
    pub seed: Option<u64>,
    pub rtt_ms: Option<f64>,
    pub slot_ms: Option<f64>,
    pub pi_b: Option<f64>,
    pub field_bits: Option<u8>,
    pub payload_len: Option<usize>,
    pub skip_infeasible: Option<bool>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub erasures: Option<[f64; 3]>,
    pub block_size: Option<u64>,
}

fn redundancy_value(field: &str, v: &toml::Value) -> Result<Redundancy, SpecError> {
    let parsed = match v {
        toml::Value::Float(f) => Redundancy::from_f64(*f),
        toml::Value::Integer(i) if *i >= 0 => Redundancy::new(*i as u64, 1),
        toml::Value::String(s) => s.parse(),
        other => return Err(SpecError::new(field, format!("{other} is not a redundancy"))),
    };
    parsed.map_err(|e| SpecError::new(field, e.to_string()))
}

fn integer_value(field: &str, v: &toml::Value) -> Result<u64, SpecError> {
    match v {
        toml::Value::Integer(i) if *i >= 1 => Ok(*i as u64),
        other => Err(SpecError::new(field, format!("{other} is not a positive integer"))),
    }
}

/// Parses a config file's text into a validated spec.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, SpecError> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| SpecError::new("config", e.message().to_string()))?;
    from_config(file)
}

pub fn load_config(path: &Path) -> Result<ExperimentSpec, SpecError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SpecError::new("config", format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Applies a config on top of its preset (or the custom template) and validates.
pub fn from_config(file: ConfigFile) -> Result<ExperimentSpec, SpecError> {
    let p: Preset = file.preset.as_deref().unwrap_or("custom").parse()?;
    if p == Preset::Custom && file.stream_len.is_none() {
        return Err(SpecError::new(
            "stream_len",
            "required when no preset is given",
        ));
    }
    let mut spec = preset(p);
    let user = |spec: &mut ExperimentSpec, key: &str| {
        spec.origins.insert(key.to_string(), Origin::User);
    };

    if let Some(v) = file.schemes {
        spec.schemes = v;
        user(&mut spec, "schemes");
    }
    if let Some(v) = file.mode {
        spec.mode = v.parse().map_err(|e: satnc::simulator::ConfigError| SpecError::new("mode", e.to_string()))?;
        user(&mut spec, "mode");
    }
    let axis_name = file.axis.clone().unwrap_or_else(|| spec.axis.name().to_string());
    if file.axis.is_some() || file.values.is_some() {
        let values = file
            .values
            .ok_or_else(|| SpecError::new("values", "required when axis is set"))?;
        spec.axis = match axis_name.as_str() {
            "R" => SweepAxis::Redundancy(
                values
                    .iter()
                    .map(|v| redundancy_value("values", v))
                    .collect::<Result<_, _>>()?,
            ),
            "k" => SweepAxis::GenerationSize(
                values
                    .iter()
                    .map(|v| integer_value("values", v))
                    .collect::<Result<_, _>>()?,
            ),
            other => return Err(SpecError::new("axis", format!("{other:?} is not R or k"))),
        };
        user(&mut spec, "axis");
        user(&mut spec, "values");
    }
    if let Some(v) = file.levels {
        spec.levels = v
            .iter()
            .map(|x| redundancy_value("levels", x))
            .collect::<Result<_, _>>()?;
        user(&mut spec, "levels");
    }
    let mut options = match &spec.generation_k {
        GenerationK::Optimize(o) => o.clone(),
        GenerationK::Fixed(_) => OptimizeOptions::default(),
    };
    let tuning = file.k_grid.is_some() || file.optimize_reps.is_some() || file.refine.is_some();
    if let Some(g) = file.k_grid {
        options.grid = g;
        user(&mut spec, "k_grid");
    }
    if let Some(r) = file.optimize_reps {
        options.replications = r;
        user(&mut spec, "optimize_reps");
    }
    if let Some(r) = file.refine {
        options.refine = r;
        user(&mut spec, "refine");
    }
    match file.k {
        Some(toml::Value::String(s)) if s == "optimize" => {
            spec.generation_k = GenerationK::Optimize(options);
            user(&mut spec, "k");
        }
        Some(v) => {
            spec.generation_k = GenerationK::Fixed(integer_value("k", &v)?);
            user(&mut spec, "k");
        }
        None if tuning => spec.generation_k = GenerationK::Optimize(options),
        None => {}
    }
    if let Some(v) = file.mean_burst {
        spec.mean_bursts = v;
        user(&mut spec, "mean_burst");
    }
    if let Some(v) = file.stream_len {
        spec.base.stream_len = v;
        if let Some(t) = spec.tandem.as_mut() {
            t.stream_len = v;
        }
        user(&mut spec, "stream_len");
    }
    if let Some(v) = file.replications {
        spec.replications = v;
        user(&mut spec, "replications");
    }
    if let Some(v) = file.seed {
        spec.master_seed = v;
        user(&mut spec, "seed");
    }
    if let Some(v) = file.rtt_ms {
        spec.base.rtt_ms = v;
        user(&mut spec, "rtt_ms");
    }
    if let Some(v) = file.slot_ms {
        spec.base.slot_ms = v;
        user(&mut spec, "slot_ms");
    }
    if let Some(v) = file.pi_b {
        spec.base.pi_b = v;
        user(&mut spec, "pi_b");
    }
    if let Some(v) = file.field_bits {
        spec.base.field_bits = v;
        if let Some(t) = spec.tandem.as_mut() {
            t.field_bits = v;
        }
        user(&mut spec, "field_bits");
    }
    if let Some(v) = file.payload_len {
        spec.base.payload_len = v;
        if let Some(t) = spec.tandem.as_mut() {
            t.payload_len = v;
        }
        user(&mut spec, "payload_len");
    }
    if let Some(v) = file.skip_infeasible {
        spec.skip_infeasible = v;
        user(&mut spec, "skip_infeasible");
    }
    if let Some(v) = file.workers {
        spec.workers = v;
        user(&mut spec, "workers");
    }
    if let Some(v) = file.out {
        spec.out = Some(v);
    }
    if file.erasures.is_some() || file.block_size.is_some() {
        let t = spec.tandem.as_mut().ok_or_else(|| {
            SpecError::new("erasures", "tandem keys need preset = \"fig7\"")
        })?;
        if let Some(e) = file.erasures {
            t.erasures = e;
            spec.origins.insert("erasures".into(), Origin::User);
        }
        if let Some(b) = file.block_size {
            t.block_size = Some(b);
            spec.origins.insert("block_size".into(), Origin::User);
        }
    }
    validate(&spec)?;
    Ok(spec)
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Range and consistency checks, each naming the offending field.
pub fn validate(spec: &ExperimentSpec) -> Result<(), SpecError> {
    if spec.replications == 0 {
        return Err(SpecError::new("replications", "must be at least 1"));
    }
    if spec.workers == 0 {
        return Err(SpecError::new("workers", "must be at least 1"));
    }
    if let Some(t) = &spec.tandem {
        if t.erasures.iter().any(|e| !(0.0..1.0).contains(e)) {
            return Err(SpecError::new("erasures", "each must lie in [0, 1)"));
        }
        if t.stream_len == 0 {
            return Err(SpecError::new("stream_len", "must be at least 1"));
        }
        if t.block_size == Some(0) {
            return Err(SpecError::new("block_size", "must be at least 1"));
        }
        if satnc::galois::GaloisField::get(t.field_bits).is_err() {
            return Err(SpecError::new("field_bits", "must be 1, 4 or 8"));
        }
        return Ok(());
    }
    if spec.schemes.is_empty() {
        return Err(SpecError::new("schemes", "at least one scheme is required"));
    }
    let registry = SchemeRegistry::builtin();
    for s in &spec.schemes {
        registry
            .get(s)
            .map_err(|e| SpecError::new("schemes", e.to_string()))?;
    }
    if spec.axis.is_empty() {
        return Err(SpecError::new("values", "sweep values must not be empty"));
    }
    let increasing = match &spec.axis {
        SweepAxis::Redundancy(v) => strictly_increasing(&v.iter().map(|r| r.as_f64()).collect::<Vec<_>>()),
        SweepAxis::GenerationSize(v) => strictly_increasing(v),
    };
    if !increasing {
        return Err(SpecError::new("values", "sweep values must be strictly increasing"));
    }
    if let SweepAxis::GenerationSize(_) = spec.axis {
        if spec.levels.is_empty() {
            return Err(SpecError::new("levels", "a k sweep needs at least one R level"));
        }
        if !strictly_increasing(&spec.levels.iter().map(|r| r.as_f64()).collect::<Vec<_>>()) {
            return Err(SpecError::new("levels", "must be strictly increasing"));
        }
    }
    if spec.mean_bursts.is_empty() || !strictly_increasing(&spec.mean_bursts) {
        return Err(SpecError::new(
            "mean_burst",
            "must be non-empty and strictly increasing",
        ));
    }
    if let Some(&b) = spec.mean_bursts.iter().find(|&&b| !(b >= 1.0 && b.is_finite())) {
        return Err(SpecError::new("mean_burst", format!("{b} is below 1")));
    }
    match &spec.generation_k {
        GenerationK::Fixed(0) => return Err(SpecError::new("k", "must be at least 1")),
        GenerationK::Optimize(o) => {
            if o.grid.is_empty() || o.grid[0] == 0 || !strictly_increasing(&o.grid) {
                return Err(SpecError::new(
                    "k_grid",
                    "must be non-empty, positive and strictly increasing",
                ));
            }
            if o.replications == 0 {
                return Err(SpecError::new("optimize_reps", "must be at least 1"));
            }
        }
        GenerationK::Fixed(_) => {}
    }
    let mut probe = spec.base.clone();
    probe.mean_burst = spec.mean_bursts[0];
    probe
        .validate()
        .map_err(|e| match e {
            satnc::simulator::ConfigError::Invalid { field, reason } => SpecError::new(field, reason),
            other => SpecError::new("config", other.to_string()),
        })?;
    Ok(())
}
