//! Log proportional-fairness rewards at three scopes: one AP (selfish), one
//! neighborhood (local), the whole WLAN (global).

use thiserror::Error;

use crate::channel::ThroughputReport;
use crate::topology::{NeighborhoodMap, Topology};

/// Throughputs are floored at this value (Mbps) before taking the logarithm.
pub const THROUGHPUT_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("no report from neighbor {neighbor} of AP {ap}")]
    MissingNeighbor { ap: usize, neighbor: usize },
}

#[inline]
fn clamped_log(throughput: f64) -> f64 {
    throughput.max(THROUGHPUT_FLOOR).ln()
}

/// R_{i}: sum of log throughputs of the STAs served by `ap`.
pub fn selfish_reward(report: &ThroughputReport, ap: usize, topology: &Topology) -> f64 {
    topology
        .stas_of(ap)
        .iter()
        .map(|&sta| clamped_log(report.per_sta[sta]))
        .sum()
}

/// R_i = sum over j in N_i of R_{j} / |N_j|.
///
/// `selfish` and `sizes` are lookups by AP index; `None` marks a report that
/// never arrived.
pub fn local_reward(
    neighborhood: &[usize],
    ap: usize,
    selfish: impl Fn(usize) -> Option<f64>,
    sizes: impl Fn(usize) -> Option<usize>,
) -> Result<f64, RewardError> {
    neighborhood
        .iter()
        .try_fold(0.0, |acc, &j| match (selfish(j), sizes(j)) {
            (Some(r), Some(n)) if n > 0 => Ok(acc + r / n as f64),
            _ => Err(RewardError::MissingNeighbor { ap, neighbor: j }),
        })
}

/// R: sum of log throughputs over every STA.
pub fn global_reward(report: &ThroughputReport) -> f64 {
    report.per_sta.iter().map(|&t| clamped_log(t)).sum()
}

/// Rewards of one evaluated joint configuration at all three scopes.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardRecord {
    pub selfish: Vec<f64>,
    pub local: Vec<f64>,
    pub global_reward: f64,
}

impl RewardRecord {
    pub fn compute(report: &ThroughputReport, topology: &Topology, neighborhoods: &NeighborhoodMap) -> Self {
        let selfish: Vec<f64> = (0..topology.ap_count())
            .map(|ap| selfish_reward(report, ap, topology))
            .collect();
        let local = (0..topology.ap_count())
            .map(|ap| {
                local_reward(
                    neighborhoods.of(ap),
                    ap,
                    |j| selfish.get(j).copied(),
                    |j| Some(neighborhoods.size(j)),
                )
                .expect("complete information")
            })
            .collect();
        RewardRecord {
            selfish,
            local,
            global_reward: global_reward(report),
        }
    }
}
