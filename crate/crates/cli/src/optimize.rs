//! Numerical choice of the generation size minimising mean in-order delay.

use rayon::prelude::*;
use satnc::derive_seed;
use satnc::metrics::{half_width, summarize, SlotDelayAccumulator};
use satnc::simulator::{run_simulation, SimConfig, SimError};
use serde::{Deserialize, Serialize};

use crate::spec::OptimizeOptions;

/// Keeps optimisation seeds apart from the seeds of the reported runs.
const OPTIMIZE_SALT: u64 = 0x6f70_745f_6b;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: u64,
    pub mean_delay_ms: f64,
    /// 95% half-width over replications; `None` with a single replication.
    pub half_width: Option<f64>,
    pub refinement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k_star: u64,
    /// Arg-min over the grid points alone.
    pub grid_best: u64,
    pub curve: Vec<CurvePoint>,
    /// False when losses are correlated: the minimum is then not known to be unique.
    pub convexity_assumed: bool,
}

impl KSelection {
    pub fn grid_curve(&self) -> impl Iterator<Item = &CurvePoint> {
        self.curve.iter().filter(|p| !p.refinement)
    }
}

fn evaluate(
    base: &SimConfig,
    k: u64,
    replications: u32,
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Result<CurvePoint, SimError> {
    let runs = pool.install(|| {
        (0..replications)
            .into_par_iter()
            .map(|rep| {
                let cfg = SimConfig {
                    generation_size: k,
                    seed: derive_seed(seed, &[OPTIMIZE_SALT, rep as u64]),
                    ..base.clone()
                };
                run_simulation(&cfg)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let summary = summarize(&runs).map_err(|e| SimError::Contract(e.to_string()))?;
    let mean_delay_ms = summary
        .delay
        .map(|d| d.mean)
        .ok_or_else(|| SimError::Contract("no packets delivered".into()))?;
    let per_rep: Vec<f64> = runs
        .iter()
        .filter_map(|r| {
            let acc: SlotDelayAccumulator = r.delay_accumulator();
            acc.stats_ms(r.slot_ms, r.propagation_ms).ok().map(|s| s.mean)
        })
        .collect();
    Ok(CurvePoint {
        k,
        mean_delay_ms,
        half_width: half_width(&per_rep),
        refinement: false,
    })
}

fn argmin(points: &[CurvePoint]) -> usize {
    // First strict minimum, so ties resolve to the smaller k.
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.mean_delay_ms < points[best].mean_delay_ms {
            best = i;
        }
    }
    best
}

/// Evaluates mean delay of the generation scheme over `options.grid` with replicated
/// runs (common seeds across `k`) and returns the minimiser.
///
/// With i.i.d. losses and `refine` set, integer points between the minimum and its
/// grid neighbours are also tried.
pub fn optimize_generation_size(
    base: &SimConfig,
    options: &OptimizeOptions,
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Result<KSelection, SimError> {
    let mut base = base.clone();
    base.scheme = "generation".into();
    let mut curve = options
        .grid
        .iter()
        .map(|&k| evaluate(&base, k, options.replications, seed, pool))
        .collect::<Result<Vec<_>, _>>()?;
    let best = argmin(&curve);
    let grid_best = curve[best].k;
    let iid = base.mean_burst == 1.0 || base.pi_b == 0.0;

    let mut k_star = grid_best;
    if iid && options.refine {
        let lo = if best > 0 { curve[best - 1].k } else { grid_best };
        let hi = curve.get(best + 1).map_or(grid_best, |p| p.k);
        let mut extra = Vec::new();
        for (a, b) in [(lo, grid_best), (grid_best, hi)] {
            let mid = ((a as f64 * b as f64).sqrt()).round() as u64;
            if mid > a && mid < b {
                let mut p = evaluate(&base, mid, options.replications, seed, pool)?;
                p.refinement = true;
                extra.push(p);
            }
        }
        curve.extend(extra);
        curve.sort_by_key(|p| p.k);
        k_star = curve[argmin(&curve)].k;
    }
    Ok(KSelection {
        k_star,
        grid_best,
        curve,
        convexity_assumed: iid,
    })
}

/// Whether a curve falls and then rises, allowing for overlap of confidence intervals:
/// no point after the minimum is significantly lower than an earlier one, and no point
/// before it significantly lower than a later one.
pub fn unimodal_within_ci(points: &[CurvePoint]) -> bool {
    if points.is_empty() {
        return true;
    }
    let best = argmin(points);
    let hw = |p: &CurvePoint| p.half_width.unwrap_or(0.0);
    let significantly_below = |a: &CurvePoint, b: &CurvePoint| a.mean_delay_ms + hw(a) < b.mean_delay_ms - hw(b);
    let falling = points[..=best]
        .windows(2)
        .all(|w| !significantly_below(&w[0], &w[1]));
    let rising = points[best..]
        .windows(2)
        .all(|w| !significantly_below(&w[1], &w[0]));
    falling && rising
}
