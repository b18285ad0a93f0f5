//! Consensus over overlapping prescriptions by weighted marginal median.
//!
//! Every receiving AP takes, dimension by dimension, the weighted median of
//! the values prescribed for it. That choice minimizes the Lipschitz bound
//! Ψ(x̃) = Σ_i L_i Σ_{j∈N_i} Σ_d |x^i_{j,d} − x̃_{j,d}| on the gap between the
//! best local rewards and the global reward of the consensus.

use thiserror::Error;

use crate::acquisition::ContinuousConfig;
use crate::topology::Configuration;

/// Absolute slack on the normalized running-weight criterion.
const WEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ConsensusError {
    #[error("no prescription to aggregate")]
    Empty,
    #[error("weights must be finite, non-negative and not all zero")]
    InvalidWeights,
}

/// Configurations proposed by `author` for each AP of its neighborhood.
#[derive(Clone, Debug, PartialEq)]
pub struct Prescription {
    pub author: usize,
    pub targets: Vec<(usize, ContinuousConfig)>,
}

impl Prescription {
    pub fn target(&self, ap: usize) -> Option<ContinuousConfig> {
        self.targets.iter().find(|(j, _)| *j == ap).map(|(_, c)| *c)
    }
}

/// Weighted median of `(value, weight)` pairs: sort by value and return the
/// first x_k whose running weight reaches the weight left above it. Ties on
/// the criterion go to the smaller value.
pub fn weighted_median(pairs: &[(f64, f64)]) -> Result<f64, ConsensusError> {
    if pairs.is_empty() {
        return Err(ConsensusError::Empty);
    }
    if pairs.iter().any(|(v, w)| !v.is_finite() || !w.is_finite() || *w < 0.0) {
        return Err(ConsensusError::InvalidWeights);
    }
    let total: f64 = pairs.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(ConsensusError::InvalidWeights);
    }
    let mut sorted: Vec<(f64, f64)> = pairs.iter().map(|&(v, w)| (v, w / total)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut below = 0.0;
    for (k, &(value, w)) in sorted.iter().enumerate() {
        below += w;
        let above: f64 = sorted[k + 1..].iter().map(|(_, w)| w).sum();
        if above - below <= WEIGHT_TOLERANCE {
            return Ok(value);
        }
    }
    Ok(sorted.last().expect("non-empty").0)
}

/// Per-dimension weighted median, before rounding.
pub fn marginal_median(received: &[(ContinuousConfig, f64)]) -> Result<ContinuousConfig, ConsensusError> {
    let dim = |d: usize| -> Vec<(f64, f64)> { received.iter().map(|(c, w)| (c.get(d), *w)).collect() };
    Ok(ContinuousConfig {
        obss_pd: weighted_median(&dim(0))?,
        tx_pwr: weighted_median(&dim(1))?,
    })
}

/// Weighted marginal median of the prescriptions received by one AP, rounded
/// once onto the configuration grid.
pub fn weighted_marginal_median(received: &[(ContinuousConfig, f64)]) -> Result<Configuration, ConsensusError> {
    marginal_median(received).map(ContinuousConfig::to_grid)
}

/// Consensus configuration of `ap` from every prescription that targets it,
/// weighting each by `weight(author)`.
pub fn aggregate_for(
    ap: usize,
    prescriptions: &[&Prescription],
    weight: impl Fn(usize) -> f64,
) -> Result<Configuration, ConsensusError> {
    let received: Vec<(ContinuousConfig, f64)> = prescriptions
        .iter()
        .filter_map(|p| p.target(ap).map(|c| (c, weight(p.author))))
        .collect();
    weighted_marginal_median(&received)
}

/// Ψ(x̃) for a candidate indexed by AP. `lipschitz` is indexed by author.
pub fn psi_objective(candidate: &[ContinuousConfig], prescriptions: &[Prescription], lipschitz: &[f64]) -> f64 {
    prescriptions
        .iter()
        .map(|p| {
            lipschitz[p.author]
                * p.targets
                    .iter()
                    .map(|(j, x)| (x.obss_pd - candidate[*j].obss_pd).abs() + (x.tx_pwr - candidate[*j].tx_pwr).abs())
                    .sum::<f64>()
        })
        .sum()
}
