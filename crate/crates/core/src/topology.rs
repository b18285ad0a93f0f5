//! WLAN arrangements: access points, stations, building geometry and radio
//! neighborhoods, plus seeded generators for office and apartment scenarios.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelOracle;

/// Lower and upper OBSS_PD bounds in dBm.
pub const OBSS_PD_RANGE: (i32, i32) = (-82, -62);
/// Lower and upper TX power bounds in dBm.
pub const TX_PWR_RANGE: (i32, i32) = (1, 21);

/// Height of an AP above its floor, meters.
const AP_HEIGHT: f64 = 2.5;
/// Height of a STA above its floor, meters.
const STA_HEIGHT: f64 = 1.0;
const DEFAULT_FLOOR_HEIGHT: f64 = 3.0;
/// STAs of an office AP are scattered within this radius.
pub const OFFICE_STA_RADIUS: f64 = 10.0;
/// Side of a square apartment, meters.
pub const APARTMENT_SIDE: f64 = 5.0;

pub type Position = [f64; 3];

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid {field}: {message}")]
    Invariant { field: String, message: String },
    #[error("station {sta} references unknown access point {ap}")]
    Association { sta: u32, ap: u32 },
    #[error("invalid generator arguments: {0}")]
    Generator(String),
}

impl TopologyError {
    fn invariant(field: impl Into<String>, message: impl Into<String>) -> Self {
        TopologyError::Invariant {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Ap,
    Sta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: u32,
    pub kind: NodeKind,
    pub position: Position,
}

/// Axis-aligned wall segment on one floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wall {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub floor: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Building {
    pub walls: Vec<Wall>,
    pub floor_height: f64,
    pub floor_count: u32,
}

impl Building {
    pub fn open_plan(floor_count: u32) -> Self {
        Building {
            walls: Vec::new(),
            floor_height: DEFAULT_FLOOR_HEIGHT,
            floor_count,
        }
    }

    /// Floor index holding height `z`, clamped to the building.
    pub fn floor_of(&self, z: f64) -> u32 {
        let f = (z / self.floor_height).floor();
        if f <= 0.0 {
            0
        } else {
            (f as u32).min(self.floor_count - 1)
        }
    }

    fn validate(&self) -> Result<(), TopologyError> {
        if !(self.floor_height.is_finite() && self.floor_height > 0.0) {
            return Err(TopologyError::invariant(
                "building.floor_height",
                format!("must be positive, got {}", self.floor_height),
            ));
        }
        if self.floor_count == 0 {
            return Err(TopologyError::invariant("building.floors", "must be at least 1"));
        }
        for (k, w) in self.walls.iter().enumerate() {
            if ![w.x1, w.y1, w.x2, w.y2].iter().all(|v| v.is_finite()) {
                return Err(TopologyError::invariant(
                    format!("building.walls[{k}]"),
                    "coordinates must be finite",
                ));
            }
            if w.x1 != w.x2 && w.y1 != w.y2 {
                return Err(TopologyError::invariant(
                    format!("building.walls[{k}]"),
                    "walls must be axis-aligned",
                ));
            }
        }
        Ok(())
    }
}

/// One AP's spatial-reuse parameters, both in dBm on the integer grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    pub obss_pd: i32,
    pub tx_pwr: i32,
}

impl Configuration {
    /// The 802.11 default: OBSS_PD = -82 dBm, TX_PWR = 20 dBm.
    pub const DEFAULT: Configuration = Configuration {
        obss_pd: -82,
        tx_pwr: 20,
    };

    pub fn new(obss_pd: i32, tx_pwr: i32) -> Result<Self, TopologyError> {
        let c = Configuration { obss_pd, tx_pwr };
        if c.is_valid() {
            Ok(c)
        } else {
            Err(TopologyError::invariant(
                "configuration",
                format!("({obss_pd}, {tx_pwr}) dBm is outside [-82, -62] x [1, 21]"),
            ))
        }
    }

    pub fn is_valid(&self) -> bool {
        (OBSS_PD_RANGE.0..=OBSS_PD_RANGE.1).contains(&self.obss_pd)
            && (TX_PWR_RANGE.0..=TX_PWR_RANGE.1).contains(&self.tx_pwr)
    }
}

impl Default for Configuration {
    fn default() -> Self {
        Configuration::DEFAULT
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}) dBm", self.obss_pd, self.tx_pwr)
    }
}

/// A configuration for every AP of a topology, indexed by AP position in
/// [`Topology::aps`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct JointConfiguration(pub Vec<Configuration>);

impl JointConfiguration {
    pub fn uniform(ap_count: usize, config: Configuration) -> Self {
        JointConfiguration(vec![config; ap_count])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, ap: usize) -> Configuration {
        self.0[ap]
    }

    pub fn covers(&self, topology: &Topology) -> bool {
        self.0.len() == topology.ap_count() && self.0.iter().all(Configuration::is_valid)
    }
}

/// APs and their associated stations inside a building.
///
/// APs and STAs are addressed internally by their index in `aps` / `stas`;
/// the `id` fields only matter for file I/O.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub aps: Vec<Node>,
    pub stas: Vec<Node>,
    /// Serving AP index of every STA.
    pub association: Vec<usize>,
    pub building: Building,
    members: Vec<Vec<usize>>,
}

impl Topology {
    pub fn new(
        aps: Vec<Node>,
        stas: Vec<Node>,
        association: Vec<usize>,
        building: Building,
    ) -> Result<Self, TopologyError> {
        building.validate()?;
        if association.len() != stas.len() {
            return Err(TopologyError::invariant(
                "association",
                format!("{} entries for {} stations", association.len(), stas.len()),
            ));
        }
        let mut seen = HashSet::new();
        for (k, node) in aps.iter().chain(stas.iter()).enumerate() {
            let expected = if k < aps.len() { NodeKind::Ap } else { NodeKind::Sta };
            let list = if expected == NodeKind::Ap { "aps" } else { "stas" };
            if node.kind != expected {
                return Err(TopologyError::invariant(
                    format!("{list}[id={}].kind", node.id),
                    "node kind does not match its list",
                ));
            }
            if !node.position.iter().all(|v| v.is_finite()) {
                return Err(TopologyError::invariant(
                    format!("{list}[id={}].pos", node.id),
                    "coordinates must be finite",
                ));
            }
            if !seen.insert(node.id) {
                return Err(TopologyError::invariant(
                    format!("{list}[id={}].id", node.id),
                    "duplicate node id",
                ));
            }
        }
        let mut members = vec![Vec::new(); aps.len()];
        for (sta, &ap) in association.iter().enumerate() {
            if ap >= aps.len() {
                return Err(TopologyError::invariant(
                    format!("stas[id={}].ap", stas[sta].id),
                    format!("AP index {ap} out of range"),
                ));
            }
            members[ap].push(sta);
        }
        Ok(Topology {
            aps,
            stas,
            association,
            building,
            members,
        })
    }

    pub fn ap_count(&self) -> usize {
        self.aps.len()
    }

    pub fn sta_count(&self) -> usize {
        self.stas.len()
    }

    /// Indices of the STAs associated with AP `ap` (the set s_i).
    pub fn stas_of(&self, ap: usize) -> &[usize] {
        &self.members[ap]
    }

    pub fn ap_index(&self, id: u32) -> Option<usize> {
        self.aps.iter().position(|n| n.id == id)
    }

    /// Sub-topology keeping only the given APs (in the given order) and their
    /// stations. Node ids are preserved.
    pub fn restrict(&self, keep: &[usize]) -> Result<Topology, TopologyError> {
        let mut remap = HashMap::new();
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.ap_count() || remap.insert(old, new).is_some() {
                return Err(TopologyError::invariant(
                    "restrict",
                    format!("AP index {old} is out of range or repeated"),
                ));
            }
        }
        let aps = keep.iter().map(|&i| self.aps[i].clone()).collect();
        let mut stas = Vec::new();
        let mut association = Vec::new();
        for &old in keep {
            for &sta in self.stas_of(old) {
                stas.push(self.stas[sta].clone());
                association.push(remap[&old]);
            }
        }
        Topology::new(aps, stas, association, self.building.clone())
    }

    /// Parse the JSON topology format.
    pub fn from_json(text: &str) -> Result<Topology, TopologyError> {
        let file: TopologyFile = serde_json::from_str(text).map_err(|e| TopologyError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        file.into_topology()
    }

    pub fn to_json(&self) -> String {
        let file = TopologyFile {
            aps: self
                .aps
                .iter()
                .map(|n| ApEntry {
                    id: n.id,
                    pos: n.position,
                })
                .collect(),
            stas: self
                .stas
                .iter()
                .zip(&self.association)
                .map(|(n, &ap)| StaEntry {
                    id: n.id,
                    pos: n.position,
                    ap: self.aps[ap].id,
                })
                .collect(),
            building: BuildingEntry {
                walls: self
                    .building
                    .walls
                    .iter()
                    .map(|w| [w.x1, w.y1, w.x2, w.y2, w.floor as f64])
                    .collect(),
                floor_height: self.building.floor_height,
                floors: self.building.floor_count,
            },
        };
        let mut out = serde_json::to_string_pretty(&file).expect("topology serializes");
        out.push('\n');
        out
    }
}

/// Parse a topology document (see [`Topology::from_json`]).
pub fn load_topology(text: &str) -> Result<Topology, TopologyError> {
    Topology::from_json(text)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    aps: Vec<ApEntry>,
    stas: Vec<StaEntry>,
    building: BuildingEntry,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApEntry {
    id: u32,
    pos: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StaEntry {
    id: u32,
    pos: [f64; 3],
    ap: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BuildingEntry {
    #[serde(default)]
    walls: Vec<[f64; 5]>,
    floor_height: f64,
    floors: u32,
}

impl TopologyFile {
    fn into_topology(self) -> Result<Topology, TopologyError> {
        let ap_index: HashMap<u32, usize> = self.aps.iter().enumerate().map(|(k, a)| (a.id, k)).collect();
        let mut association = Vec::with_capacity(self.stas.len());
        for s in &self.stas {
            match ap_index.get(&s.ap) {
                Some(&k) => association.push(k),
                None => return Err(TopologyError::Association { sta: s.id, ap: s.ap }),
            }
        }
        let mut walls = Vec::with_capacity(self.building.walls.len());
        for (k, w) in self.building.walls.iter().enumerate() {
            if !(w[4] >= 0.0 && w[4].fract() == 0.0) {
                return Err(TopologyError::invariant(
                    format!("building.walls[{k}][4]"),
                    "floor index must be a non-negative integer",
                ));
            }
            walls.push(Wall {
                x1: w[0],
                y1: w[1],
                x2: w[2],
                y2: w[3],
                floor: w[4] as u32,
            });
        }
        let building = Building {
            walls,
            floor_height: self.building.floor_height,
            floor_count: self.building.floors,
        };
        let aps = self
            .aps
            .iter()
            .map(|a| Node {
                id: a.id,
                kind: NodeKind::Ap,
                position: a.pos,
            })
            .collect();
        let stas = self
            .stas
            .iter()
            .map(|s| Node {
                id: s.id,
                kind: NodeKind::Sta,
                position: s.pos,
            })
            .collect();
        Topology::new(aps, stas, association, building)
    }
}

/// Radio neighborhoods N_i under the default configuration. Each list is
/// sorted and contains the AP itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborhoodMap {
    pub neighbors: Vec<Vec<usize>>,
    /// Set when every neighborhood is a singleton: nothing to coordinate.
    pub degenerate: bool,
}

impl NeighborhoodMap {
    /// Build from arbitrary adjacency lists; adds self-loops and symmetrizes by
    /// union.
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let n = lists.len();
        let mut sets: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
        for (i, list) in lists.iter().enumerate() {
            for &j in list {
                sets[i].insert(j);
                sets[j].insert(i);
            }
        }
        let neighbors: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let degenerate = neighbors.iter().all(|n| n.len() == 1);
        NeighborhoodMap { neighbors, degenerate }
    }

    pub fn of(&self, ap: usize) -> &[usize] {
        &self.neighbors[ap]
    }

    pub fn size(&self, ap: usize) -> usize {
        self.neighbors[ap].len()
    }

    pub fn contains(&self, ap: usize, other: usize) -> bool {
        self.neighbors[ap].binary_search(&other).is_ok()
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

/// j joins N_i when the beacon of i, sent at the default TX power, reaches j
/// at or above j's default OBSS_PD. The relation is then symmetrized.
pub fn compute_neighborhoods(oracle: &ChannelOracle, default_config: Configuration) -> NeighborhoodMap {
    let n = oracle.topology().ap_count();
    let mut lists = vec![Vec::new(); n];
    for (i, list) in lists.iter_mut().enumerate() {
        for j in 0..n {
            if i == j {
                continue;
            }
            let rx = crate::channel::received_power(default_config.tx_pwr as f64, oracle.ap_path_loss(i, j));
            if rx >= default_config.obss_pd as f64 {
                list.push(j);
            }
        }
    }
    let map = NeighborhoodMap::from_lists(&lists);
    if map.degenerate && n > 1 {
        log::warn!("all {n} neighborhoods are singletons; spatial reuse is already maximal");
    }
    map
}

fn check_dims(width: f64, depth: f64) -> Result<(), TopologyError> {
    if !(width.is_finite() && depth.is_finite() && width > 0.0 && depth > 0.0) {
        return Err(TopologyError::Generator(format!(
            "floor dimensions must be positive, got {width} x {depth}"
        )));
    }
    Ok(())
}

/// Office-style floor: APs on a jittered grid, STAs uniform in a disc of
/// [`OFFICE_STA_RADIUS`] around their AP, clipped to the floor.
pub fn generate_office_topology(
    ap_count: usize,
    stas_per_ap: usize,
    floor_dims: (f64, f64),
    seed: u64,
) -> Result<Topology, TopologyError> {
    let (width, depth) = floor_dims;
    if ap_count == 0 {
        return Err(TopologyError::Generator("ap_count must be at least 1".into()));
    }
    check_dims(width, depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = ((ap_count as f64 * width / depth).sqrt().ceil() as usize).clamp(1, ap_count);
    let rows = ap_count.div_ceil(cols);
    let (cell_w, cell_d) = (width / cols as f64, depth / rows as f64);

    let mut aps = Vec::with_capacity(ap_count);
    for k in 0..ap_count {
        let (c, r) = ((k % cols) as f64, (k / cols) as f64);
        let x = (c + 0.5 + rng.random_range(-0.25..0.25)) * cell_w;
        let y = (r + 0.5 + rng.random_range(-0.25..0.25)) * cell_d;
        aps.push(Node {
            id: k as u32,
            kind: NodeKind::Ap,
            position: [x, y, AP_HEIGHT],
        });
    }
    let mut stas = Vec::with_capacity(ap_count * stas_per_ap);
    let mut association = Vec::with_capacity(ap_count * stas_per_ap);
    for (k, ap) in aps.iter().enumerate() {
        for _ in 0..stas_per_ap {
            let [ax, ay, _] = ap.position;
            let (x, y) = loop {
                let radius = OFFICE_STA_RADIUS * rng.random::<f64>().sqrt();
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let (x, y) = (ax + radius * angle.cos(), ay + radius * angle.sin());
                if (0.0..=width).contains(&x) && (0.0..=depth).contains(&y) {
                    break (x, y);
                }
            };
            stas.push(Node {
                id: (ap_count + stas.len()) as u32,
                kind: NodeKind::Sta,
                position: [x, y, STA_HEIGHT],
            });
            association.push(k);
        }
    }
    Topology::new(aps, stas, association, Building::open_plan(1))
}

/// Apartment block: `floors` stories of 5 x 5 m apartments laid out on a grid,
/// one AP per apartment, walls on every apartment boundary.
pub fn generate_apartment_topology(
    floors: u32,
    apartments_per_floor: usize,
    stas_per_ap: usize,
    seed: u64,
) -> Result<Topology, TopologyError> {
    if floors == 0 || apartments_per_floor == 0 {
        return Err(TopologyError::Generator(
            "floors and apartments_per_floor must be at least 1".into(),
        ));
    }
    let rows = (1..=(apartments_per_floor as f64).sqrt() as usize)
        .rev()
        .find(|r| apartments_per_floor.is_multiple_of(*r))
        .unwrap_or(1);
    let cols = apartments_per_floor / rows;
    let (width, depth) = (cols as f64 * APARTMENT_SIDE, rows as f64 * APARTMENT_SIDE);
    let floor_height = DEFAULT_FLOOR_HEIGHT;

    let mut walls = Vec::new();
    for f in 0..floors {
        for c in 1..cols {
            let x = c as f64 * APARTMENT_SIDE;
            walls.push(Wall {
                x1: x,
                y1: 0.0,
                x2: x,
                y2: depth,
                floor: f,
            });
        }
        for r in 1..rows {
            let y = r as f64 * APARTMENT_SIDE;
            walls.push(Wall {
                x1: 0.0,
                y1: y,
                x2: width,
                y2: y,
                floor: f,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 0.25;
    let inside = |origin: f64, rng: &mut ChaCha8Rng| origin + rng.random_range(margin..APARTMENT_SIDE - margin);
    let total = floors as usize * apartments_per_floor;
    let mut aps = Vec::with_capacity(total);
    let mut stas = Vec::with_capacity(total * stas_per_ap);
    let mut association = Vec::with_capacity(total * stas_per_ap);
    for f in 0..floors {
        let base_z = f as f64 * floor_height;
        for a in 0..apartments_per_floor {
            let (x0, y0) = ((a % cols) as f64 * APARTMENT_SIDE, (a / cols) as f64 * APARTMENT_SIDE);
            let ap = aps.len();
            aps.push(Node {
                id: ap as u32,
                kind: NodeKind::Ap,
                position: [inside(x0, &mut rng), inside(y0, &mut rng), base_z + AP_HEIGHT],
            });
            for _ in 0..stas_per_ap {
                stas.push(Node {
                    id: 0,
                    kind: NodeKind::Sta,
                    position: [inside(x0, &mut rng), inside(y0, &mut rng), base_z + STA_HEIGHT],
                });
                association.push(ap);
            }
        }
    }
    for (k, sta) in stas.iter_mut().enumerate() {
        sta.id = (total + k) as u32;
    }
    let building = Building {
        walls,
        floor_height,
        floor_count: floors,
    };
    Topology::new(aps, stas, association, building)
}
