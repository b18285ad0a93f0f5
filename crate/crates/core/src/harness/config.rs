use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agents::StrategyKind;
use crate::channel::{path_loss, OracleParams, PathLossParams};
use crate::topology::{generate_apartment_topology, generate_office_topology, load_topology, Topology};

/// Where the topology comes from: a JSON file or a seeded generator.
///
/// Generator specs:
/// - `gen:office:<aps>:<stas_per_ap>:<W>x<D>:<seed>`
/// - `gen:apartment:<floors>:<apts_per_floor>:<stas_per_ap>:<seed>[:<keep>]`,
///   where `keep` retains a spread-out co-channel subset (see [`co_channel_subset`]).
#[derive(Clone, Debug, PartialEq)]
pub enum TopologySource {
    File(PathBuf),
    Office {
        aps: usize,
        stas_per_ap: usize,
        width: f64,
        depth: f64,
        seed: u64,
    },
    Apartment {
        floors: u32,
        apts_per_floor: usize,
        stas_per_ap: usize,
        seed: u64,
        keep: Option<usize>,
    },
}

fn field<T: FromStr>(spec: &str, what: &str, raw: &str) -> Result<T, HarnessError> {
    raw.parse()
        .map_err(|_| HarnessError::Config(format!("bad {what} `{raw}` in topology spec `{spec}`")))
}

impl FromStr for TopologySource {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let Some(rest) = s.strip_prefix("gen:") else {
            return Ok(TopologySource::File(PathBuf::from(s)));
        };
        let parts: Vec<&str> = rest.split(':').collect();
        match parts.as_slice() {
            ["office", aps, stas, dims, seed] => {
                let (w, d) = dims
                    .split_once('x')
                    .ok_or_else(|| HarnessError::Config(format!("floor size must be <W>x<D> in `{s}`")))?;
                Ok(TopologySource::Office {
                    aps: field(s, "AP count", aps)?,
                    stas_per_ap: field(s, "STAs per AP", stas)?,
                    width: field(s, "width", w)?,
                    depth: field(s, "depth", d)?,
                    seed: field(s, "seed", seed)?,
                })
            }
            ["apartment", floors, apts, stas, seed, keep @ ..] if keep.len() <= 1 => Ok(TopologySource::Apartment {
                floors: field(s, "floor count", floors)?,
                apts_per_floor: field(s, "apartments per floor", apts)?,
                stas_per_ap: field(s, "STAs per AP", stas)?,
                seed: field(s, "seed", seed)?,
                keep: keep.first().map(|k| field(s, "kept AP count", k)).transpose()?,
            }),
            _ => Err(HarnessError::Config(format!("unrecognized topology generator `{s}`"))),
        }
    }
}

impl fmt::Display for TopologySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologySource::File(p) => write!(f, "{}", p.display()),
            TopologySource::Office {
                aps,
                stas_per_ap,
                width,
                depth,
                seed,
            } => {
                write!(f, "gen:office:{aps}:{stas_per_ap}:{width}x{depth}:{seed}")
            }
            TopologySource::Apartment {
                floors,
                apts_per_floor,
                stas_per_ap,
                seed,
                keep,
            } => {
                write!(f, "gen:apartment:{floors}:{apts_per_floor}:{stas_per_ap}:{seed}")?;
                match keep {
                    Some(k) => write!(f, ":{k}"),
                    None => Ok(()),
                }
            }
        }
    }
}

impl Serialize for TopologySource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TopologySource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

impl TopologySource {
    /// Load or generate. Relative file paths resolve against `base`.
    pub fn resolve(&self, base: Option<&Path>) -> Result<Topology, HarnessError> {
        match self {
            TopologySource::File(path) => {
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
                Ok(load_topology(&text)?)
            }
            TopologySource::Office {
                aps,
                stas_per_ap,
                width,
                depth,
                seed,
            } => Ok(generate_office_topology(*aps, *stas_per_ap, (*width, *depth), *seed)?),
            TopologySource::Apartment {
                floors,
                apts_per_floor,
                stas_per_ap,
                seed,
                keep,
            } => {
                let full = generate_apartment_topology(*floors, *apts_per_floor, *stas_per_ap, *seed)?;
                match keep {
                    Some(k) => Ok(full.restrict(&co_channel_subset(&full, *k))?),
                    None => Ok(full),
                }
            }
        }
    }
}

/// Indices of `keep` APs that a channel plan would put on one channel:
/// greedy farthest-point selection by default path loss, seeded with the AP
/// nearest the centroid. Ascending.
pub fn co_channel_subset(topology: &Topology, keep: usize) -> Vec<usize> {
    let n = topology.ap_count();
    if n == 0 || keep == 0 {
        return Vec::new();
    }
    let mut centroid = [0.0; 3];
    for ap in &topology.aps {
        for (c, p) in centroid.iter_mut().zip(ap.position) {
            *c += p / n as f64;
        }
    }
    let sq = |p: [f64; 3]| (0..3).map(|k| (p[k] - centroid[k]).powi(2)).sum::<f64>();
    let first = (0..n)
        .min_by(|&a, &b| sq(topology.aps[a].position).total_cmp(&sq(topology.aps[b].position)))
        .unwrap_or(0);

    let params = PathLossParams::default();
    let loss = |i: usize, j: usize| {
        path_loss(
            &topology.aps[i].position,
            &topology.aps[j].position,
            &topology.building,
            &params,
        )
    };
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|j| loss(first, j)).collect();
    nearest[first] = f64::NEG_INFINITY;
    while chosen.len() < keep.min(n) {
        let next = (0..n)
            .filter(|j| !chosen.contains(j))
            .max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(b.cmp(&a)))
            .expect("unchosen AP left");
        chosen.push(next);
        for (j, d) in nearest.iter_mut().enumerate() {
            *d = d.min(loss(next, j));
        }
        nearest[next] = f64::NEG_INFINITY;
    }
    chosen.sort_unstable();
    chosen
}

/// One or several strategies; JSON accepts a name or a list of names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum StrategySpec {
    One(StrategyKind),
    Many(Vec<StrategyKind>),
}

fn default_iters() -> usize {
    400
}
fn default_seeds() -> usize {
    22
}
fn default_dt_ms() -> f64 {
    75.0
}
fn default_out() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    topology: TopologySource,
    strategy: StrategySpec,
    #[serde(default = "default_iters")]
    iters: usize,
    #[serde(default = "default_seeds")]
    seeds: usize,
    #[serde(default)]
    first_seed: u64,
    #[serde(default = "default_dt_ms")]
    dt_ms: f64,
    #[serde(default)]
    oracle: OracleParams,
    #[serde(default)]
    oracle_param: BTreeMap<String, f64>,
    #[serde(default)]
    loss_prob: f64,
    #[serde(default = "default_out")]
    out: PathBuf,
    #[serde(default)]
    regret_reference: Option<f64>,
}

/// Everything one `run` needs. JSON keys mirror the CLI flags.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub topology: TopologySource,
    pub strategies: Vec<StrategyKind>,
    pub iterations: usize,
    pub seeds: usize,
    /// Seeds run are `first_seed .. first_seed + seeds`.
    pub first_seed: u64,
    /// Simulated round length; only reported, the oracle is stationary.
    pub dt_ms: f64,
    pub oracle: OracleParams,
    pub loss_prob: f64,
    pub out_dir: PathBuf,
    /// Fixed regret reference; `None` takes the best normalized reward seen.
    pub regret_reference: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(topology: TopologySource, strategies: Vec<StrategyKind>, out_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            topology,
            strategies,
            iterations: default_iters(),
            seeds: default_seeds(),
            first_seed: 0,
            dt_ms: default_dt_ms(),
            oracle: OracleParams::default(),
            loss_prob: 0.0,
            out_dir: out_dir.into(),
            regret_reference: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut oracle = raw.oracle;
        for (k, v) in &raw.oracle_param {
            oracle.set(k, *v)?;
        }
        let cfg = ExperimentConfig {
            topology: raw.topology,
            strategies: match raw.strategy {
                StrategySpec::One(k) => vec![k],
                StrategySpec::Many(v) => v,
            },
            iterations: raw.iters,
            seeds: raw.seeds,
            first_seed: raw.first_seed,
            dt_ms: raw.dt_ms,
            oracle,
            loss_prob: raw.loss_prob,
            out_dir: raw.out,
            regret_reference: raw.regret_reference,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.seeds == 0 {
            return bad("seeds must be at least 1");
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required");
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return bad("loss probability must lie in [0, 1]");
        }
        if !(self.dt_ms.is_finite() && self.dt_ms > 0.0) {
            return bad("dt_ms must be positive");
        }
        if self.regret_reference.is_some_and(|r| !(0.0..=1.0).contains(&r)) {
            return bad("regret reference must lie in [0, 1]");
        }
        self.oracle.validate()?;
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|k| self.first_seed + k).collect()
    }
}
