//! Evaluation metrics: normalized reward, cumulative regret, starvation,
//! smoothing and quartiles.

use crate::channel::ThroughputReport;
use crate::reward::THROUGHPUT_FLOOR;

/// Fraction of attainable throughput below which a STA starves.
pub const STARVATION_RATIO: f64 = 0.1;
pub const EMA_ALPHA: f64 = 0.04;

/// Topology-level range of the global reward: every STA at the floor versus
/// every STA at its attainable throughput.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardBounds {
    pub min: f64,
    pub max: f64,
}

impl RewardBounds {
    pub fn from_attainable(attainable: &[f64]) -> Self {
        RewardBounds {
            min: attainable.len() as f64 * THROUGHPUT_FLOOR.ln(),
            max: attainable.iter().map(|a| a.max(THROUGHPUT_FLOOR).ln()).sum(),
        }
    }

    pub fn normalize(&self, global_reward: f64) -> f64 {
        normalized_reward(global_reward, self)
    }
}

/// (R − R_min)/(R_max − R_min) clamped to [0, 1]; a degenerate range maps to
/// 1 at or above R_max and 0 below.
pub fn normalized_reward(global_reward: f64, bounds: &RewardBounds) -> f64 {
    let span = bounds.max - bounds.min;
    if span <= 0.0 {
        return if global_reward >= bounds.max { 1.0 } else { 0.0 };
    }
    ((global_reward - bounds.min) / span).clamp(0.0, 1.0)
}

/// Γ_t = Σ_{u≤t} max(reference − r_u, 0).
pub fn cumulative_regret(normalized_rewards: &[f64], reference: f64) -> Vec<f64> {
    normalized_rewards
        .iter()
        .scan(0.0, |acc, r| {
            *acc += (reference - r).max(0.0);
            Some(*acc)
        })
        .collect()
}

/// STAs under 10% of their attainable throughput. STAs that cannot be served
/// even alone are not counted.
pub fn starvation_count(report: &ThroughputReport, attainable: &[f64]) -> usize {
    report
        .per_sta
        .iter()
        .zip(attainable)
        .filter(|(thr, att)| **att > 0.0 && **thr < STARVATION_RATIO * **att)
        .count()
}

/// y_0 = x_0, y_t = α x_t + (1 − α) y_{t−1}.
pub fn ema(series: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    for (t, &x) in series.iter().enumerate() {
        let y = if t == 0 {
            x
        } else {
            alpha * x + (1.0 - alpha) * out[t - 1]
        };
        out.push(y);
    }
    out
}

/// Percentile `p` in [0, 1] of sorted data, linear between ranks.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, 0.5)
}

/// Per-iteration (Q1, median, Q3) across replications of equal length.
pub fn quartiles(replications: &[Vec<f64>]) -> [Vec<f64>; 3] {
    let len = replications.iter().map(Vec::len).min().unwrap_or(0);
    let mut out = [
        Vec::with_capacity(len),
        Vec::with_capacity(len),
        Vec::with_capacity(len),
    ];
    let mut column = Vec::with_capacity(replications.len());
    for t in 0..len {
        column.clear();
        column.extend(replications.iter().map(|r| r[t]));
        column.sort_by(f64::total_cmp);
        for (q, p) in [0.25, 0.5, 0.75].into_iter().enumerate() {
            out[q].push(percentile_sorted(&column, p));
        }
    }
    out
}
