//! Distributed Bayesian optimization of 802.11ax spatial-reuse parameters.
//!
//! Every access point runs a Gaussian-process bandit over the transmit power
//! and OBSS packet-detect threshold of its radio neighborhood, proposes a
//! configuration for each neighbor, and applies the weighted marginal median of
//! the proposals it receives. The crate also ships an analytic WLAN throughput
//! oracle, three baseline strategies and an experiment harness.
//!
//! Module map:
//!
//! * [`topology`]: APs, STAs, building geometry, neighborhoods, generators.
//! * [`channel`]: path loss, conflict graph, airtime, SINR and throughput.
//! * [`reward`]: selfish, local and global log-proportional-fairness rewards.
//! * [`gp`]: Matérn-3/2 Gaussian-process regression with incremental Cholesky.
//! * [`acquisition`]: expected improvement, its gradient, and its maximization.
//! * [`consensus`]: weighted marginal median aggregation of prescriptions.
//! * [`agents`]: per-AP strategies and the synchronous round orchestrator.
//! * [`harness`]: metrics, experiment runner and CSV output.

pub mod acquisition;
pub mod agents;
pub mod channel;
pub mod consensus;
pub mod gp;
pub mod harness;
pub mod reward;
pub mod topology;

pub use acquisition::{AcquisitionConfig, ContinuousConfig};
pub use agents::{Orchestrator, StrategyKind};
pub use channel::{ChannelOracle, OracleParams, RateTable, ThroughputReport};
pub use gp::{GpModel, KernelParams, PosteriorStats};
pub use harness::{ExperimentConfig, MetricsRecord};
pub use topology::{Configuration, JointConfiguration, NeighborhoodMap, Topology};
