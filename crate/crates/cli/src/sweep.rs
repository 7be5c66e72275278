//! Runs an [`ExperimentSpec`]: plans every (scheme, E[L], level, axis value) point,
//! executes the replications on a worker pool and aggregates them in plan order.
//!
//! Replication `r` of a point uses the seed `derive_seed(master, [E[L] index, level
//! index, r])`. Neither the scheme nor the axis value is part of the seed, so every
//! point of a series sees the same channel realisations (common random numbers).

use std::collections::BTreeMap;

use rayon::prelude::*;
use satnc::coding::Redundancy;
use satnc::derive_seed;
use satnc::metrics::{summarize, PointSummary};
use satnc::multihop::{e2e_redundancy_count, run_tandem, Strategy, TandemError};
use satnc::simulator::{RunMetrics, SchemeRegistry, SimConfig, SimError};
use serde::Serialize;
use thiserror::Error;

use crate::optimize::{optimize_generation_size, KSelection};
use crate::spec::{ExperimentSpec, GenerationK, SweepAxis};

pub const CSV_COLUMNS: [&str; 14] = [
    "scheme", "mode", "axis_name", "axis_value", "E_L", "R", "k", "eta", "E_D_ms", "var_D",
    "std_D", "PER", "reps", "seed",
];

pub const TANDEM_COLUMNS: [&str; 12] = [
    "strategy",
    "link",
    "epsilon",
    "packets_carried",
    "packets_received",
    "useful_dof",
    "eta",
    "eta_half_width",
    "source_redundancy",
    "sink_decodes",
    "reps",
    "seed",
];

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("point {point}: {source}")]
    Run { point: String, source: SimError },
    #[error("tandem run: {0}")]
    Tandem(#[from] TandemError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("aggregation at {point}: {reason}")]
    Aggregate { point: String, reason: String },
}

impl SweepError {
    /// Configuration problems map to exit code 2, everything else to 3.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            SweepError::Run {
                source: SimError::Config(_),
                ..
            }
        )
    }
}

/// One planned output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannedPoint {
    pub scheme: String,
    pub mean_burst: f64,
    pub redundancy: Redundancy,
    /// `None` for schemes without generations.
    pub k: Option<u64>,
    pub axis_value: String,
    /// Position in the plan: (E[L] index, level index, axis index).
    pub coords: (u64, u64, u64),
}

impl PlannedPoint {
    fn label(&self) -> String {
        format!(
            "scheme={} E[L]={} R={} k={}",
            self.scheme,
            self.mean_burst,
            self.redundancy,
            self.k.map_or("-".into(), |k| k.to_string())
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: PlannedPoint,
    pub summary: PointSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedPoint {
    pub point: PlannedPoint,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<SkippedPoint>,
    /// Generation size selections keyed by "E_L=..,R=..".
    pub selections: BTreeMap<String, KSelection>,
    pub csv: String,
    pub manifest: serde_json::Value,
}

pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, SweepError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn redundancy_text(r: Redundancy) -> String {
    fmt_f64(r.as_f64())
}

fn selection_key(mean_burst: f64, r: Redundancy) -> String {
    format!("E_L={mean_burst},R={r}")
}

fn point_config(spec: &ExperimentSpec, p: &PlannedPoint) -> SimConfig {
    SimConfig {
        scheme: p.scheme.clone(),
        mode: spec.mode,
        redundancy: p.redundancy,
        generation_size: p.k.unwrap_or(1),
        mean_burst: p.mean_burst,
        ..spec.base.clone()
    }
}

/// Runs every point of the spec and renders CSV and manifest.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepOutput, SweepError> {
    let pool = worker_pool(spec.workers)?;
    let registry = SchemeRegistry::builtin();

    // Generation sizes chosen numerically, one per (E[L], R) pair.
    let mut selections = BTreeMap::new();
    if let (SweepAxis::Redundancy(values), GenerationK::Optimize(opts)) = (&spec.axis, &spec.generation_k) {
        if spec.schemes.iter().any(|s| s == "generation") {
            for (bi, &burst) in spec.mean_bursts.iter().enumerate() {
                for (ai, &r) in values.iter().enumerate() {
                    let base = SimConfig {
                        scheme: "generation".into(),
                        mode: spec.mode,
                        redundancy: r,
                        mean_burst: burst,
                        ..spec.base.clone()
                    };
                    let seed = derive_seed(spec.master_seed, &[bi as u64, 0, ai as u64]);
                    let sel = optimize_generation_size(&base, opts, seed, &pool).map_err(|source| {
                        SweepError::Run {
                            point: format!("optimising k at E[L]={burst} R={r}"),
                            source,
                        }
                    })?;
                    selections.insert(selection_key(burst, r), sel);
                }
            }
        }
    }

    // Plan.
    let mut planned = Vec::new();
    let mut skipped = Vec::new();
    for scheme in &spec.schemes {
        let generation = scheme == "generation";
        for (bi, &burst) in spec.mean_bursts.iter().enumerate() {
            let levels: Vec<Option<Redundancy>> = match &spec.axis {
                SweepAxis::Redundancy(_) => vec![None],
                SweepAxis::GenerationSize(_) => spec.levels.iter().copied().map(Some).collect(),
            };
            for (li, level) in levels.into_iter().enumerate() {
                for ai in 0..spec.axis.len() {
                    let (redundancy, k, axis_value) = match &spec.axis {
                        SweepAxis::Redundancy(v) => {
                            let r = v[ai];
                            let k = match &spec.generation_k {
                                GenerationK::Fixed(k) => *k,
                                GenerationK::Optimize(_) => selections
                                    .get(&selection_key(burst, r))
                                    .map_or(1, |s| s.k_star),
                            };
                            (r, k, redundancy_text(r))
                        }
                        SweepAxis::GenerationSize(v) => {
                            (level.expect("level per k sweep"), v[ai], v[ai].to_string())
                        }
                    };
                    let redundancy = if scheme == "arq" { Redundancy::ONE } else { redundancy };
                    let point = PlannedPoint {
                        scheme: scheme.clone(),
                        mean_burst: burst,
                        redundancy,
                        k: generation.then_some(k),
                        axis_value,
                        coords: (bi as u64, li as u64, ai as u64),
                    };
                    let cfg = point_config(spec, &point);
                    match registry.validate(&cfg) {
                        Ok(()) => planned.push(point),
                        Err(e) if spec.skip_infeasible => skipped.push(SkippedPoint {
                            point,
                            reason: e.to_string(),
                        }),
                        Err(e) => {
                            return Err(SweepError::Run {
                                point: point.label(),
                                source: e.into(),
                            })
                        }
                    }
                }
            }
        }
    }

    // Execute: one job per (point, replication), results collected in plan order.
    let reps = spec.replications as u64;
    let jobs: Vec<(usize, u64)> = (0..planned.len())
        .flat_map(|i| (0..reps).map(move |r| (i, r)))
        .collect();
    let results: Vec<Result<RunMetrics, SweepError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, rep)| {
                let p = &planned[i];
                let (b, l, _) = p.coords;
                let cfg = SimConfig {
                    seed: derive_seed(spec.master_seed, &[b, l, rep]),
                    ..point_config(spec, p)
                };
                registry.run(&cfg).map_err(|source| SweepError::Run {
                    point: format!("{} rep={rep}", p.label()),
                    source,
                })
            })
            .collect()
    });
    let mut results = results.into_iter();
    let mut rows = Vec::with_capacity(planned.len());
    for point in planned {
        let runs = results
            .by_ref()
            .take(reps as usize)
            .collect::<Result<Vec<_>, _>>()?;
        let summary = summarize(&runs).map_err(|e| SweepError::Aggregate {
            point: point.label(),
            reason: e.to_string(),
        })?;
        rows.push(SweepRow { point, summary });
    }

    let csv = render_csv(spec, &rows);
    let manifest = manifest(spec, &rows, &skipped, &selections);
    Ok(SweepOutput {
        rows,
        skipped,
        selections,
        csv,
        manifest,
    })
}

fn render_csv(spec: &ExperimentSpec, rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for row in rows {
        let p = &row.point;
        let s = &row.summary;
        let (mean, var, std) = s
            .delay
            .map_or((String::new(), String::new(), String::new()), |d| {
                (fmt_f64(d.mean), fmt_f64(d.variance), fmt_f64(d.std))
            });
        w.write_record([
            p.scheme.clone(),
            spec.mode.to_string(),
            spec.axis.name().to_string(),
            p.axis_value.clone(),
            fmt_f64(p.mean_burst),
            redundancy_text(p.redundancy),
            p.k.map_or(String::new(), |k| k.to_string()),
            fmt_f64(s.efficiency),
            mean,
            var,
            std,
            fmt_f64(s.per),
            s.replications.to_string(),
            spec.master_seed.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

fn manifest(
    spec: &ExperimentSpec,
    rows: &[SweepRow],
    skipped: &[SkippedPoint],
    selections: &BTreeMap<String, KSelection>,
) -> serde_json::Value {
    serde_json::json!({
        "software": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "preset": spec.preset,
        "master_seed": spec.master_seed,
        "seed_rule": "derive_seed(master, [E_L index, level index, replication]); shared by all schemes and axis values",
        "csv_columns": CSV_COLUMNS,
        "parameter_origins": spec.origins,
        "spec": spec,
        "rows": rows.len(),
        "skipped": skipped,
        "k_selection": selections,
        "notes": {
            "E_D_ms": "mean over every delivered packet of (delivery_slot - first_tx_slot) * slot_ms + rtt_ms / 2",
            "var_D": "unbiased (n-1) variance of the pooled delay samples",
            "eta": "total information packets / total packets received by the sink",
            "PER": "total erased / total information packets",
            "R_for_arq": "arq sends no redundancy; its R column is 1 and its rows repeat across an R axis",
        },
    })
}

/// Per-strategy, per-link tandem results averaged over replications.
#[derive(Debug, Clone, Serialize)]
pub struct TandemRow {
    pub strategy: Strategy,
    pub link: usize,
    pub epsilon: f64,
    pub packets_carried: f64,
    pub packets_received: f64,
    pub useful_dof: f64,
    pub efficiency: f64,
    pub efficiency_half_width: Option<f64>,
    pub source_redundancy: u64,
    pub sink_decodes: u64,
    /// Per-replication link efficiencies, in replication order.
    pub efficiencies: Vec<f64>,
    /// Per-replication carried counts, in replication order.
    pub carried: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TandemOutput {
    pub rows: Vec<TandemRow>,
    pub csv: String,
    pub manifest: serde_json::Value,
}

/// Both strategies over the same link realisations, replicated.
pub fn run_tandem_sweep(spec: &ExperimentSpec) -> Result<TandemOutput, SweepError> {
    let t = spec
        .tandem
        .as_ref()
        .ok_or_else(|| SweepError::Pool("spec has no tandem section".into()))?;
    let pool = worker_pool(spec.workers)?;
    let strategies = [Strategy::EndToEnd, Strategy::HopByHop];
    let jobs: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&s| (0..spec.replications as u64).map(move |r| (s, r)))
        .collect();
    let reports = pool.install(|| {
        jobs.par_iter()
            .map(|&(s, rep)| run_tandem(&t.config(s, derive_seed(spec.master_seed, &[rep]))))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let reps = spec.replications as usize;
    let source_redundancy = e2e_redundancy_count(t.stream_len, &t.erasures)?;
    let mut rows = Vec::new();
    for (si, &strategy) in strategies.iter().enumerate() {
        let runs = &reports[si * reps..(si + 1) * reps];
        for link in 0..3 {
            let eff: Vec<f64> = runs.iter().map(|r| r.links[link].efficiency).collect();
            let carried: Vec<u64> = runs.iter().map(|r| r.links[link].packets_carried).collect();
            let mean = |f: &dyn Fn(&satnc::multihop::TandemReport) -> u64| {
                runs.iter().map(|r| f(r)).sum::<u64>() as f64 / reps as f64
            };
            let received = runs.iter().map(|r| r.links[link].packets_received).sum::<u64>();
            let useful = runs.iter().map(|r| r.links[link].useful_dof_delivered).sum::<u64>();
            rows.push(TandemRow {
                strategy,
                link: link + 1,
                epsilon: t.erasures[link],
                packets_carried: mean(&|r| r.links[link].packets_carried),
                packets_received: received as f64 / reps as f64,
                useful_dof: useful as f64 / reps as f64,
                efficiency: useful as f64 / received.max(1) as f64,
                efficiency_half_width: satnc::metrics::half_width(&eff),
                source_redundancy: if strategy == Strategy::EndToEnd {
                    source_redundancy
                } else {
                    e2e_redundancy_count(t.stream_len, &t.erasures[..1])?
                },
                sink_decodes: runs.iter().map(|r| r.sink_decodes).sum::<u64>() / reps as u64,
                efficiencies: eff,
                carried,
            });
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TANDEM_COLUMNS).expect("in-memory write");
    for r in &rows {
        w.write_record([
            r.strategy.to_string(),
            r.link.to_string(),
            fmt_f64(r.epsilon),
            fmt_f64(r.packets_carried),
            fmt_f64(r.packets_received),
            fmt_f64(r.useful_dof),
            fmt_f64(r.efficiency),
            r.efficiency_half_width.map_or(String::new(), fmt_f64),
            r.source_redundancy.to_string(),
            r.sink_decodes.to_string(),
            spec.replications.to_string(),
            spec.master_seed.to_string(),
        ])
        .expect("in-memory write");
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv");
    let manifest = serde_json::json!({
        "software": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "preset": spec.preset,
        "master_seed": spec.master_seed,
        "seed_rule": "derive_seed(master, [replication]); both strategies share link realisations",
        "csv_columns": TANDEM_COLUMNS,
        "parameter_origins": spec.origins,
        "spec": spec,
        "notes": {
            "eta": "useful degrees of freedom / packets received on the link, pooled over replications",
            "source_redundancy": "nominal coded packets added by S for the whole stream",
        },
    });
    Ok(TandemOutput {
        rows,
        csv,
        manifest,
    })
}
