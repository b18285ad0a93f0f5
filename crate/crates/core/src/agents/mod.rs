//! Per-AP strategies and the synchronous round orchestrator.
//!
//! Agents never share state. Everything an INSPIRE agent learns about its
//! neighbors arrives as a [`RoundMessage`] from an AP of its own
//! neighborhood.

mod baselines;
mod inspire;
mod orchestrator;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::consensus::Prescription;
use crate::topology::Configuration;

pub use baselines::{dsc_step, ArmStats, DefaultAgent, DscAgent, ThompsonAgent, DSC_MARGIN_DB, THOMPSON_ARMS};
pub use inspire::{InspireAgent, InspireSettings};
pub use orchestrator::{Orchestrator, OrchestratorSettings, RoundOutcome, RoundTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Inspire,
    Default,
    Dsc,
    Thompson,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Inspire,
        StrategyKind::Default,
        StrategyKind::Dsc,
        StrategyKind::Thompson,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Inspire => "inspire",
            StrategyKind::Default => "default",
            StrategyKind::Dsc => "dsc",
            StrategyKind::Thompson => "thompson",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown strategy `{0}` (expected inspire, default, dsc or thompson)")]
pub struct UnknownStrategy(pub String);

impl FromStr for StrategyKind {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownStrategy(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Prescribe,
    Report,
}

/// One neighborhood broadcast. PRESCRIBE carries a prescription; REPORT
/// carries the sender's selfish reward, neighborhood size and applied
/// configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMessage {
    pub sender: usize,
    pub phase: Phase,
    pub prescription: Option<Prescription>,
    pub selfish_reward: Option<f64>,
    pub neighborhood_size: Option<usize>,
    pub applied_config: Option<Configuration>,
}

impl RoundMessage {
    pub fn prescribe(prescription: Prescription) -> Self {
        RoundMessage {
            sender: prescription.author,
            phase: Phase::Prescribe,
            prescription: Some(prescription),
            selfish_reward: None,
            neighborhood_size: None,
            applied_config: None,
        }
    }

    pub fn report(sender: usize, selfish_reward: f64, neighborhood_size: usize, applied: Configuration) -> Self {
        RoundMessage {
            sender,
            phase: Phase::Report,
            prescription: None,
            selfish_reward: Some(selfish_reward),
            neighborhood_size: Some(neighborhood_size),
            applied_config: Some(applied),
        }
    }
}

/// Independent per-stream seed from an experiment seed.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
