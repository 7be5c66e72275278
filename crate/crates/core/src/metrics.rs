//! Delay, efficiency and erasure-rate statistics, per run and across replications.
//!
//! Delays are produced by the simulator as whole slot counts. Pooled statistics are
//! accumulated as exact integer sums, so the summary of a set of replications does
//! not depend on the order in which they are combined.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::simulator::RunMetrics;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no delay samples")]
    EmptySamples,
    #[error("no packets received at the sink")]
    NothingReceived,
    #[error("stream length must be at least 1")]
    EmptyStream,
    #[error("{erased} erased out of {total} is not a valid count")]
    ErasedCount { erased: u64, total: u64 },
    #[error("no replications to summarise")]
    NoReplications,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    pub mean: f64,
    pub variance: f64,
    pub std: f64,
}

/// Sample mean, unbiased variance and standard deviation.
pub fn delay_stats(samples: &[f64]) -> Result<DelayStats, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = if samples.len() < 2 {
        0.0
    } else {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    Ok(DelayStats {
        mean,
        variance,
        std: variance.sqrt(),
    })
}

/// Information degrees of freedom over packets received by the sink.
pub fn efficiency(dof_needed: u64, sink_received: u64) -> Result<f64, MetricsError> {
    if sink_received == 0 {
        return Err(MetricsError::NothingReceived);
    }
    Ok(dof_needed as f64 / sink_received as f64)
}

/// Fraction of the stream never delivered to the upper layer.
pub fn per(erased: u64, total: u64) -> Result<f64, MetricsError> {
    if total == 0 {
        return Err(MetricsError::EmptyStream);
    }
    if erased > total {
        return Err(MetricsError::ErasedCount { erased, total });
    }
    Ok(erased as f64 / total as f64)
}

/// Exact running sums over integer slot delays.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SlotDelayAccumulator {
    count: u64,
    sum: u128,
    sum_sq: u128,
}

impl SlotDelayAccumulator {
    pub fn push(&mut self, slots: u64) {
        self.count += 1;
        self.sum += slots as u128;
        self.sum_sq += (slots as u128) * (slots as u128);
    }

    pub fn merge(&mut self, other: &SlotDelayAccumulator) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Statistics in milliseconds for `delay = slots·slot_ms + offset_ms`.
    pub fn stats_ms(&self, slot_ms: f64, offset_ms: f64) -> Result<DelayStats, MetricsError> {
        if self.count == 0 {
            return Err(MetricsError::EmptySamples);
        }
        let n = self.count as u128;
        let mean_slots = self.sum as f64 / self.count as f64;
        let var_slots = if n < 2 {
            0.0
        } else {
            // n·Σs² − (Σs)² is exact in integers and never negative.
            let num = n * self.sum_sq - self.sum * self.sum;
            num as f64 / (n * (n - 1)) as f64
        };
        let variance = var_slots * slot_ms * slot_ms;
        Ok(DelayStats {
            mean: mean_slots * slot_ms + offset_ms,
            variance,
            std: variance.sqrt(),
        })
    }
}

/// Aggregate over the replications of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub replications: usize,
    /// Pooled over every delivered packet of every replication.
    pub delay: Option<DelayStats>,
    /// Pooled: total information packets over total packets received.
    pub efficiency: f64,
    /// Pooled: total erased over total stream length.
    pub per: f64,
    /// 95% half-widths from the spread of per-replication values; `None` with one
    /// replication.
    pub delay_half_width: Option<f64>,
    pub efficiency_half_width: Option<f64>,
    pub per_half_width: Option<f64>,
}

/// Two-sided 95% Student-t half-width of the mean of `values`.
pub fn half_width(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let stats = delay_stats(&sorted).ok()?;
    let df = (sorted.len() - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, df).ok()?.inverse_cdf(0.975);
    Some(t * stats.std / (sorted.len() as f64).sqrt())
}

/// Combines replications of one configuration.
pub fn summarize(runs: &[RunMetrics]) -> Result<PointSummary, MetricsError> {
    let first = runs.first().ok_or(MetricsError::NoReplications)?;
    let (slot_ms, offset_ms) = (first.slot_ms, first.propagation_ms);

    let mut pooled = SlotDelayAccumulator::default();
    let (mut dof, mut received, mut erased, mut total) = (0u64, 0u64, 0u64, 0u64);
    let mut rep_delay = Vec::with_capacity(runs.len());
    let mut rep_eta = Vec::with_capacity(runs.len());
    let mut rep_per = Vec::with_capacity(runs.len());
    for run in runs {
        let acc = run.delay_accumulator();
        pooled.merge(&acc);
        dof += run.dof_needed;
        received += run.sink_received_count;
        erased += run.erased_count;
        total += run.dof_needed;
        if let Ok(s) = acc.stats_ms(slot_ms, offset_ms) {
            rep_delay.push(s.mean);
        }
        if let Ok(e) = run.efficiency() {
            rep_eta.push(e);
        }
        rep_per.push(run.per()?);
    }
    Ok(PointSummary {
        replications: runs.len(),
        delay: pooled.stats_ms(slot_ms, offset_ms).ok(),
        efficiency: efficiency(dof, received)?,
        per: per(erased, total)?,
        delay_half_width: half_width(&rep_delay),
        efficiency_half_width: half_width(&rep_eta),
        per_half_width: half_width(&rep_per),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delay_stats_examples() {
        let s = delay_stats(&[100.0, 100.0, 100.0]).unwrap();
        assert_eq!((s.mean, s.variance, s.std), (100.0, 0.0, 0.0));
        let s = delay_stats(&[100.0, 102.0]).unwrap();
        assert_eq!((s.mean, s.variance), (101.0, 2.0));
        assert!((s.std - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(delay_stats(&[]), Err(MetricsError::EmptySamples));
        assert_eq!(delay_stats(&[5.0]).unwrap().variance, 0.0);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(efficiency(1000, 1000), Ok(1.0));
        assert_eq!(efficiency(1000, 1250), Ok(0.8));
        assert_eq!(efficiency(1000, 0), Err(MetricsError::NothingReceived));
        assert_eq!(per(0, 1000), Ok(0.0));
        assert_eq!(per(50, 1000), Ok(0.05));
        assert_eq!(per(1, 0), Err(MetricsError::EmptyStream));
        assert!(per(5, 4).is_err());
    }

    #[test]
    fn accumulator_matches_float_path() {
        let slots = [0u64, 3, 3, 10, 250, 7];
        let mut acc = SlotDelayAccumulator::default();
        slots.iter().for_each(|&s| acc.push(s));
        let ms: Vec<f64> = slots.iter().map(|&s| s as f64 * 1.2 + 100.0).collect();
        let a = acc.stats_ms(1.2, 100.0).unwrap();
        let b = delay_stats(&ms).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-9);
        assert!((a.variance - b.variance).abs() < 1e-6);
    }

    #[test]
    fn half_width_known_value() {
        // t_{0.975, 1} = 12.706..., std of [0, 2] is sqrt(2), n = 2.
        let h = half_width(&[0.0, 2.0]).unwrap();
        assert!((h - 12.706_204_736).abs() < 1e-6, "{h}");
        assert_eq!(half_width(&[1.0]), None);
    }
}
