//! Analytic WLAN throughput oracle.
//!
//! Path loss follows an ITU-style indoor law with per-wall and per-floor
//! penalties. An AP defers to another when it hears it above its OBSS_PD;
//! deferring pairs form a conflict graph and each AP gets an airtime share
//! of one over the size of the largest conflict clique it belongs to. APs
//! that do not conflict transmit concurrently and show up as interference in
//! the SINR, which picks the PHY rate from an MCS table.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Building, Configuration, JointConfiguration, Position, Topology};

/// Distances are clamped below by this value, meters.
pub const MIN_DISTANCE: f64 = 0.1;
/// Largest AP count for which airtime is computed by exact clique search.
pub const MAX_AIRTIME_APS: usize = 25;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("airtime computation is limited to {MAX_AIRTIME_APS} APs, got {0}")]
    TooManyAps(usize),
    #[error("invalid rate table: {0}")]
    RateTable(String),
    #[error("invalid oracle parameter {key}: {message}")]
    Param { key: String, message: String },
    #[error("joint configuration covers {got} APs, topology has {expected}")]
    JointMismatch { got: usize, expected: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossParams {
    pub reference_loss_1m: f64,
    pub distance_exponent_times10: f64,
    pub wall_loss: f64,
    pub floor_loss: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        PathLossParams {
            reference_loss_1m: 40.0,
            distance_exponent_times10: 30.0,
            wall_loss: 8.0,
            floor_loss: 4.0,
        }
    }
}

/// SINR thresholds (dB) and PHY rates (Mbps), both strictly increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateTable {
    pub entries: Vec<(f64, f64)>,
    pub mac_efficiency: f64,
}

impl Default for RateTable {
    /// 802.11ax, one spatial stream, 20 MHz, 0.8 us guard interval.
    fn default() -> Self {
        const THRESHOLDS: [f64; 12] = [2.0, 5.0, 9.0, 11.0, 15.0, 18.0, 20.0, 22.0, 25.0, 27.0, 29.0, 31.0];
        const RATES: [f64; 12] = [
            8.6, 17.2, 25.8, 34.4, 51.6, 68.8, 77.4, 86.0, 103.2, 114.7, 129.0, 143.4,
        ];
        RateTable {
            entries: THRESHOLDS.into_iter().zip(RATES).collect(),
            mac_efficiency: 0.7,
        }
    }
}

impl RateTable {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.entries.is_empty() {
            return Err(ChannelError::RateTable("no entries".into()));
        }
        if !(self.mac_efficiency > 0.0 && self.mac_efficiency <= 1.0) {
            return Err(ChannelError::RateTable(format!(
                "mac_efficiency {} outside (0, 1]",
                self.mac_efficiency
            )));
        }
        for pair in self.entries.windows(2) {
            if !(pair[1].0 > pair[0].0 && pair[1].1 > pair[0].1) {
                return Err(ChannelError::RateTable(
                    "thresholds and rates must be strictly increasing".into(),
                ));
            }
        }
        if self.entries[0].1 <= 0.0 {
            return Err(ChannelError::RateTable("rates must be positive".into()));
        }
        Ok(())
    }

    pub fn top_rate(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    pub path_loss: PathLossParams,
    pub noise_floor_dbm: f64,
    pub offered_downlink_mbps: f64,
    pub rate_table: RateTable,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            path_loss: PathLossParams::default(),
            noise_floor_dbm: -94.0,
            offered_downlink_mbps: 50.0,
            rate_table: RateTable::default(),
        }
    }
}

impl OracleParams {
    /// Apply a `key=value` override as given on the command line.
    /// The parameters are left untouched when the result is invalid.
    pub fn set(&mut self, key: &str, value: f64) -> Result<(), ChannelError> {
        let mut next = self.clone();
        let slot = match key {
            "reference_loss_1m" => &mut next.path_loss.reference_loss_1m,
            "distance_exponent_times10" => &mut next.path_loss.distance_exponent_times10,
            "wall_loss" => &mut next.path_loss.wall_loss,
            "floor_loss" => &mut next.path_loss.floor_loss,
            "noise_floor_dbm" => &mut next.noise_floor_dbm,
            "offered_downlink_mbps" => &mut next.offered_downlink_mbps,
            "mac_efficiency" => &mut next.rate_table.mac_efficiency,
            _ => {
                return Err(ChannelError::Param {
                    key: key.into(),
                    message: "unknown parameter".into(),
                })
            }
        };
        *slot = value;
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let pl = &self.path_loss;
        for (key, v) in [
            ("reference_loss_1m", pl.reference_loss_1m),
            ("distance_exponent_times10", pl.distance_exponent_times10),
            ("wall_loss", pl.wall_loss),
            ("floor_loss", pl.floor_loss),
            ("offered_downlink_mbps", self.offered_downlink_mbps),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ChannelError::Param {
                    key: key.into(),
                    message: format!("must be finite and non-negative, got {v}"),
                });
            }
        }
        if !self.noise_floor_dbm.is_finite() {
            return Err(ChannelError::Param {
                key: "noise_floor_dbm".into(),
                message: "must be finite".into(),
            });
        }
        self.rate_table.validate()
    }
}

fn distance(a: &Position, b: &Position) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
    d2.sqrt().max(MIN_DISTANCE)
}

/// Number of walls the straight path a-b goes through. A wall counts when the
/// path crosses it strictly, at a height inside the wall's floor.
pub fn walls_crossed(a: &Position, b: &Position, building: &Building) -> usize {
    let mut count = 0;
    for w in &building.walls {
        let vertical = w.x1 == w.x2;
        let (fixed, lo, hi) = if vertical {
            (w.x1, w.y1.min(w.y2), w.y1.max(w.y2))
        } else {
            (w.y1, w.x1.min(w.x2), w.x1.max(w.x2))
        };
        if lo == hi {
            continue;
        }
        // Coordinate normal to the wall, then coordinate along it.
        let (na, nb, la, lb) = if vertical {
            (a[0], b[0], a[1], b[1])
        } else {
            (a[1], b[1], a[0], b[0])
        };
        if (na - fixed) * (nb - fixed) >= 0.0 {
            continue;
        }
        let t = (fixed - na) / (nb - na);
        let along = la + t * (lb - la);
        if along < lo || along > hi {
            continue;
        }
        let z = a[2] + t * (b[2] - a[2]);
        if building.floor_of(z) == w.floor {
            count += 1;
        }
    }
    count
}

pub fn floors_crossed(a: &Position, b: &Position, building: &Building) -> u32 {
    building.floor_of(a[2]).abs_diff(building.floor_of(b[2]))
}

/// PL(d) = L0 + N log10(d) + Lw * walls + Lf * floors, in dB.
pub fn path_loss(a: &Position, b: &Position, building: &Building, params: &PathLossParams) -> f64 {
    params.reference_loss_1m
        + params.distance_exponent_times10 * distance(a, b).log10()
        + params.wall_loss * walls_crossed(a, b, building) as f64
        + params.floor_loss * floors_crossed(a, b, building) as f64
}

pub fn received_power(tx_pwr_dbm: f64, path_loss_db: f64) -> f64 {
    tx_pwr_dbm - path_loss_db
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Carrier-sense relations between APs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConflictGraph {
    n: usize,
    /// `defers[j * n + i]`: AP j senses AP i above its OBSS_PD.
    defers: Vec<bool>,
}

impl ConflictGraph {
    pub fn from_defers(n: usize, defers: impl Fn(usize, usize) -> bool) -> Self {
        let mut d = vec![false; n * n];
        for j in 0..n {
            for i in 0..n {
                d[j * n + i] = i != j && defers(j, i);
            }
        }
        ConflictGraph { n, defers: d }
    }

    /// Undirected graph given by an edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        ConflictGraph::from_defers(n, |j, i| edges.contains(&(i, j)) || edges.contains(&(j, i)))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn defers(&self, j: usize, i: usize) -> bool {
        self.defers[j * self.n + i]
    }

    /// Symmetric closure of `defers`.
    pub fn conflict(&self, i: usize, j: usize) -> bool {
        self.defers(i, j) || self.defers(j, i)
    }

    pub fn edge_count(&self) -> usize {
        (0..self.n)
            .flat_map(|i| (i + 1..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.conflict(i, j))
            .count()
    }
}

/// share_i = 1 / size of the largest conflict clique containing i.
pub fn airtime_shares(cg: &ConflictGraph) -> Result<Vec<f64>, ChannelError> {
    let n = cg.len();
    if n > MAX_AIRTIME_APS {
        return Err(ChannelError::TooManyAps(n));
    }
    let adj: Vec<u32> = (0..n)
        .map(|i| (0..n).filter(|&j| cg.conflict(i, j)).fold(0u32, |m, j| m | (1 << j)))
        .collect();
    let mut omega = vec![1u32; n];
    let all = if n == 0 { 0 } else { u32::MAX >> (32 - n) };
    bron_kerbosch(0, all, 0, &adj, &mut omega);
    Ok(omega.into_iter().map(|w| 1.0 / w as f64).collect())
}

/// Enumerates maximal cliques with pivoting; records for every vertex the size
/// of the largest maximal clique it appears in.
fn bron_kerbosch(r: u32, mut p: u32, mut x: u32, adj: &[u32], omega: &mut [u32]) {
    if p == 0 {
        if x == 0 {
            let size = r.count_ones();
            let mut bits = r;
            while bits != 0 {
                let v = bits.trailing_zeros() as usize;
                omega[v] = omega[v].max(size);
                bits &= bits - 1;
            }
        }
        return;
    }
    let mut pivot_src = p | x;
    let mut pivot = 0;
    let mut best = -1i32;
    while pivot_src != 0 {
        let u = pivot_src.trailing_zeros() as usize;
        let c = (p & adj[u]).count_ones() as i32;
        if c > best {
            best = c;
            pivot = u;
        }
        pivot_src &= pivot_src - 1;
    }
    let mut candidates = p & !adj[pivot];
    while candidates != 0 {
        let v = candidates.trailing_zeros() as usize;
        let bit = 1u32 << v;
        bron_kerbosch(r | bit, p & adj[v], x & adj[v], adj, omega);
        p &= !bit;
        x |= bit;
        candidates &= candidates - 1;
    }
}

/// Rate of the highest threshold not above `sinr_db`; 0 when the link is down.
pub fn sinr_to_phy_rate(sinr_db: f64, table: &RateTable) -> f64 {
    table
        .entries
        .iter()
        .take_while(|(threshold, _)| *threshold <= sinr_db)
        .last()
        .map_or(0.0, |&(_, rate)| rate)
}

/// Per-STA downlink throughput for one evaluated joint configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputReport {
    /// Mbps, indexed like [`Topology::stas`].
    pub per_sta: Vec<f64>,
    /// Airtime fraction of every AP.
    pub per_ap_airtime: Vec<f64>,
}

impl ThroughputReport {
    pub fn total(&self) -> f64 {
        self.per_sta.iter().sum()
    }
}

/// A topology bound to oracle parameters, with path losses precomputed.
#[derive(Clone, Debug)]
pub struct ChannelOracle {
    topology: Topology,
    params: OracleParams,
    ap_ap: Vec<f64>,
    ap_sta: Vec<f64>,
}

impl ChannelOracle {
    pub fn new(topology: &Topology, params: OracleParams) -> Self {
        let (n, s) = (topology.ap_count(), topology.sta_count());
        let b = &topology.building;
        let mut ap_ap = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    ap_ap[i * n + j] = path_loss(
                        &topology.aps[i].position,
                        &topology.aps[j].position,
                        b,
                        &params.path_loss,
                    );
                }
            }
        }
        let mut ap_sta = vec![0.0; n * s];
        for i in 0..n {
            for k in 0..s {
                ap_sta[i * s + k] = path_loss(
                    &topology.aps[i].position,
                    &topology.stas[k].position,
                    b,
                    &params.path_loss,
                );
            }
        }
        ChannelOracle {
            topology: topology.clone(),
            params,
            ap_ap,
            ap_sta,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn params(&self) -> &OracleParams {
        &self.params
    }

    pub fn ap_path_loss(&self, i: usize, j: usize) -> f64 {
        self.ap_ap[i * self.topology.ap_count() + j]
    }

    pub fn sta_path_loss(&self, ap: usize, sta: usize) -> f64 {
        self.ap_sta[ap * self.topology.sta_count() + sta]
    }

    /// j defers to i iff i's signal reaches j at or above j's OBSS_PD.
    pub fn conflict_graph(&self, joint: &JointConfiguration) -> ConflictGraph {
        ConflictGraph::from_defers(self.topology.ap_count(), |j, i| {
            received_power(joint.get(i).tx_pwr as f64, self.ap_path_loss(i, j)) >= joint.get(j).obss_pd as f64
        })
    }

    /// Strongest power received at `ap` from any other AP, dBm.
    pub fn strongest_neighbor_rssi(&self, ap: usize, joint: &JointConfiguration) -> Option<f64> {
        (0..self.topology.ap_count())
            .filter(|&i| i != ap)
            .map(|i| received_power(joint.get(i).tx_pwr as f64, self.ap_path_loss(i, ap)))
            .reduce(f64::max)
    }

    /// SINR at `sta` from its serving AP; every AP not in conflict with the
    /// serving AP transmits concurrently and interferes.
    pub fn sinr_db(&self, sta: usize, cg: &ConflictGraph, joint: &JointConfiguration) -> f64 {
        let serving = self.topology.association[sta];
        let signal = dbm_to_mw(received_power(
            joint.get(serving).tx_pwr as f64,
            self.sta_path_loss(serving, sta),
        ));
        let mut denom = dbm_to_mw(self.params.noise_floor_dbm);
        for k in 0..self.topology.ap_count() {
            if k != serving && !cg.conflict(serving, k) {
                denom += dbm_to_mw(received_power(joint.get(k).tx_pwr as f64, self.sta_path_loss(k, sta)));
            }
        }
        10.0 * (signal / denom).log10()
    }

    fn station_rate(&self, ap: usize, airtime: f64, sinr: f64) -> f64 {
        let table = &self.params.rate_table;
        let share =
            airtime * table.mac_efficiency * sinr_to_phy_rate(sinr, table) / self.topology.stas_of(ap).len() as f64;
        share.min(self.params.offered_downlink_mbps)
    }

    pub fn evaluate(&self, joint: &JointConfiguration) -> Result<ThroughputReport, ChannelError> {
        if joint.len() != self.topology.ap_count() {
            return Err(ChannelError::JointMismatch {
                got: joint.len(),
                expected: self.topology.ap_count(),
            });
        }
        let cg = self.conflict_graph(joint);
        let airtime = airtime_shares(&cg)?;
        let per_sta = (0..self.topology.sta_count())
            .map(|sta| {
                let ap = self.topology.association[sta];
                self.station_rate(ap, airtime[ap], self.sinr_db(sta, &cg, joint))
            })
            .collect();
        Ok(ThroughputReport {
            per_sta,
            per_ap_airtime: airtime,
        })
    }

    /// Throughput of every STA when its AP runs alone at the default
    /// configuration. Reference for starvation accounting.
    pub fn attainable_throughput(&self) -> Vec<f64> {
        let tx = Configuration::DEFAULT.tx_pwr as f64;
        (0..self.topology.sta_count())
            .map(|sta| {
                let ap = self.topology.association[sta];
                let sinr = received_power(tx, self.sta_path_loss(ap, sta)) - self.params.noise_floor_dbm;
                self.station_rate(ap, 1.0, sinr)
            })
            .collect()
    }
}
