use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::geometry::{Point, Projection};
use crate::ledger::{Geotag, Timestamp};

/// Simulator node index. RSIs occupy `0..rsi_count`, vehicles follow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Rsi,
    Vehicle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "edges")]
pub enum Adjacency {
    FullMesh,
    /// Undirected RSI index pairs.
    Edges(Vec<(u32, u32)>),
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("topology needs at least one RSI")]
    NoRsi,
    #[error("RSI peer graph is not connected")]
    Disconnected,
    #[error("edge ({0}, {1}) names an RSI that does not exist")]
    BadEdge(u32, u32),
    #[error("mobility trace count {traces} does not match vehicle count {vehicles}")]
    TraceCount { traces: usize, vehicles: usize },
    #[error("mobility trace for vehicle {0} is empty or not time-ordered")]
    BadTrace(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub rsi_positions: Vec<Point>,
    pub adjacency: Adjacency,
    /// Radio reach of an RSI, meters.
    pub rsi_range: f64,
    /// Vehicle-to-vehicle reach, meters.
    pub v2v_range: f64,
    pub projection: Projection,
}

impl Topology {
    pub fn rsi_count(&self) -> usize {
        self.rsi_positions.len()
    }

    /// Peer lists per RSI, sorted by id.
    pub fn peer_lists(&self) -> Result<Vec<Vec<NodeId>>, TopologyError> {
        let n = self.rsi_count();
        if n == 0 {
            return Err(TopologyError::NoRsi);
        }
        let mut peers = vec![Vec::new(); n];
        match &self.adjacency {
            Adjacency::FullMesh => {
                for (i, p) in peers.iter_mut().enumerate() {
                    *p = (0..n as u32).filter(|&j| j as usize != i).map(NodeId).collect();
                }
            }
            Adjacency::Edges(edges) => {
                for &(a, b) in edges {
                    if a as usize >= n || b as usize >= n || a == b {
                        return Err(TopologyError::BadEdge(a, b));
                    }
                    peers[a as usize].push(NodeId(b));
                    peers[b as usize].push(NodeId(a));
                }
                for p in &mut peers {
                    p.sort_unstable();
                    p.dedup();
                }
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for p in &peers[i] {
                if !std::mem::replace(&mut seen[p.index()], true) {
                    queue.push_back(p.index());
                }
            }
        }
        if seen.iter().all(|&s| s) {
            Ok(peers)
        } else {
            Err(TopologyError::Disconnected)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub at: Timestamp,
    pub pos: Point,
}

/// Piecewise-linear path. Before the first waypoint and after the last one
/// the vehicle holds still, so a position exists at every instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobilityTrace {
    pub waypoints: Vec<Waypoint>,
}

impl MobilityTrace {
    pub fn stationary(pos: Point) -> Self {
        MobilityTrace {
            waypoints: vec![Waypoint { at: 0, pos }],
        }
    }

    fn is_valid(&self) -> bool {
        !self.waypoints.is_empty() && self.waypoints.windows(2).all(|w| w[0].at < w[1].at)
    }

    pub fn position_at(&self, t: Timestamp) -> Point {
        let w = &self.waypoints;
        let i = w.partition_point(|p| p.at <= t);
        if i == 0 {
            return w[0].pos;
        }
        if i == w.len() {
            return w[i - 1].pos;
        }
        let (a, b) = (&w[i - 1], &w[i]);
        a.pos.lerp(&b.pos, (t - a.at) as f64 / (b.at - a.at) as f64)
    }
}

/// Latency in whole milliseconds, uniform over `base * (1 ± jitter)`
/// rounded to the nearest millisecond.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub base_ms: f64,
    #[serde(default)]
    pub jitter: f64,
}

impl Latency {
    pub const fn fixed(ms: f64) -> Latency {
        Latency {
            base_ms: ms,
            jitter: 0.0,
        }
    }

    pub fn bounds(&self) -> (u64, u64) {
        let lo = (self.base_ms * (1.0 - self.jitter)).round().max(0.0) as u64;
        let hi = (self.base_ms * (1.0 + self.jitter)).round().max(0.0) as u64;
        (lo, hi.max(lo))
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        let (lo, hi) = self.bounds();
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..=hi)
        }
    }
}

/// During `[from, until)` the listed nodes can only talk among themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub from: Timestamp,
    pub until: Timestamp,
    pub nodes: Vec<u32>,
}

impl Partition {
    pub fn active_at(&self, t: Timestamp) -> bool {
        self.from <= t && t < self.until
    }

    /// Whether the edge `a`–`b` crosses this partition's cut.
    pub fn cuts(&self, a: NodeId, b: NodeId) -> bool {
        self.nodes.contains(&a.0) != self.nodes.contains(&b.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeClass {
    RsiRsi,
    VehicleRsi,
    VehicleVehicle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    pub rsi_rsi: Latency,
    pub vehicle_rsi: Latency,
    pub vehicle_vehicle: Latency,
    pub drop_probability: f64,
    pub partitions: Vec<Partition>,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            rsi_rsi: Latency {
                base_ms: 1.0,
                jitter: 0.2,
            },
            vehicle_rsi: Latency {
                base_ms: 5.0,
                jitter: 0.2,
            },
            vehicle_vehicle: Latency {
                base_ms: 5.0,
                jitter: 0.2,
            },
            drop_probability: 0.0,
            partitions: Vec::new(),
        }
    }
}

impl LinkModel {
    pub fn zero_latency() -> Self {
        LinkModel {
            rsi_rsi: Latency::fixed(0.0),
            vehicle_rsi: Latency::fixed(0.0),
            vehicle_vehicle: Latency::fixed(0.0),
            ..Default::default()
        }
    }

    pub fn latency(&self, class: EdgeClass) -> &Latency {
        match class {
            EdgeClass::RsiRsi => &self.rsi_rsi,
            EdgeClass::VehicleRsi => &self.vehicle_rsi,
            EdgeClass::VehicleVehicle => &self.vehicle_vehicle,
        }
    }

    pub fn partitioned(&self, a: NodeId, b: NodeId, t: Timestamp) -> bool {
        self.partitions.iter().any(|p| p.active_at(t) && p.cuts(a, b))
    }

    /// Whether any partition cuts `a`–`b` at some instant in `[from, to]`.
    pub fn partitioned_during(&self, a: NodeId, b: NodeId, from: Timestamp, to: Timestamp) -> bool {
        self.partitions
            .iter()
            .any(|p| p.from <= to && from < p.until && p.cuts(a, b))
    }
}

/// Everything the simulator knows about the physical world: where nodes
/// are, who can hear whom, and how links behave. Read-only during a run.
#[derive(Clone, Debug)]
pub struct World {
    topology: Topology,
    peers: Vec<Vec<NodeId>>,
    mobility: Vec<MobilityTrace>,
    link: LinkModel,
}

impl World {
    pub fn new(topology: Topology, mobility: Vec<MobilityTrace>, link: LinkModel) -> Result<World, TopologyError> {
        let peers = topology.peer_lists()?;
        if let Some(i) = mobility.iter().position(|m| !m.is_valid()) {
            return Err(TopologyError::BadTrace(i));
        }
        Ok(World {
            topology,
            peers,
            mobility,
            link,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    pub fn projection(&self) -> &Projection {
        &self.topology.projection
    }

    pub fn rsi_count(&self) -> usize {
        self.topology.rsi_count()
    }

    pub fn vehicle_count(&self) -> usize {
        self.mobility.len()
    }

    pub fn node_count(&self) -> usize {
        self.rsi_count() + self.vehicle_count()
    }

    pub fn role(&self, id: NodeId) -> Role {
        if id.index() < self.rsi_count() {
            Role::Rsi
        } else {
            Role::Vehicle
        }
    }

    pub fn is_rsi(&self, id: NodeId) -> bool {
        self.role(id) == Role::Rsi
    }

    pub fn rsi_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.rsi_count() as u32).map(NodeId)
    }

    pub fn vehicle_ids(&self) -> impl Iterator<Item = NodeId> {
        let r = self.rsi_count() as u32;
        (r..r + self.vehicle_count() as u32).map(NodeId)
    }

    pub fn vehicle_id(&self, vehicle_index: usize) -> NodeId {
        NodeId((self.rsi_count() + vehicle_index) as u32)
    }

    pub fn rsi_peers(&self, rsi: NodeId) -> &[NodeId] {
        &self.peers[rsi.index()]
    }

    pub fn position(&self, id: NodeId, t: Timestamp) -> Point {
        match self.role(id) {
            Role::Rsi => self.topology.rsi_positions[id.index()],
            Role::Vehicle => self.mobility[id.index() - self.rsi_count()].position_at(t),
        }
    }

    pub fn geotag_of(&self, id: NodeId, t: Timestamp) -> Geotag {
        self.projection()
            .to_geotag(&self.position(id, t))
            .expect("scenario positions stay within valid coordinates")
    }

    /// Closest RSI within `rsi_range`; ties go to the lower id.
    pub fn nearest_rsi(&self, vehicle: NodeId, t: Timestamp) -> Option<NodeId> {
        self.nearest_rsi_to(&self.position(vehicle, t))
    }

    pub fn nearest_rsi_to(&self, p: &Point) -> Option<NodeId> {
        let range = self.topology.rsi_range;
        self.rsi_ids()
            .map(|id| (id, self.topology.rsi_positions[id.index()].distance(p)))
            .filter(|&(_, d)| d <= range)
            // Ties keep the earlier, lower id.
            .fold(None, |best: Option<(NodeId, f64)>, (id, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((id, d)),
            })
            .map(|(id, _)| id)
    }

    pub fn rsis_within(&self, p: &Point, radius: f64) -> Vec<NodeId> {
        self.rsi_ids()
            .filter(|id| self.topology.rsi_positions[id.index()].distance(p) <= radius)
            .collect()
    }

    pub fn vehicles_within(&self, p: &Point, radius: f64, t: Timestamp) -> Vec<NodeId> {
        self.vehicle_ids()
            .filter(|&id| self.position(id, t).distance(p) <= radius)
            .collect()
    }

    /// Ground truth for witnesses: is some vehicle other than `exclude`
    /// physically within `tolerance` meters of `p` at `t`?
    pub fn vehicle_present_near(&self, p: &Point, tolerance: f64, t: Timestamp, exclude: NodeId) -> bool {
        self.vehicle_ids()
            .any(|id| id != exclude && self.position(id, t).distance(p) <= tolerance)
    }

    /// Closest other vehicle within V2V range; ties go to the lower id.
    pub fn nearest_vehicle(&self, vehicle: NodeId, t: Timestamp) -> Option<NodeId> {
        let here = self.position(vehicle, t);
        let range = self.topology.v2v_range;
        self.vehicle_ids()
            .filter(|&id| id != vehicle)
            .map(|id| (id, self.position(id, t).distance(&here)))
            .filter(|&(_, d)| d <= range)
            .fold(None, |best: Option<(NodeId, f64)>, (id, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((id, d)),
            })
            .map(|(id, _)| id)
    }

    /// Vehicle inside some RSI's radio range. Covered vehicles reach every
    /// RSI through the infrastructure backhaul.
    pub fn covered(&self, vehicle: NodeId, t: Timestamp) -> bool {
        self.nearest_rsi(vehicle, t).is_some()
    }

    pub fn edge_class(&self, a: NodeId, b: NodeId) -> EdgeClass {
        match (self.role(a), self.role(b)) {
            (Role::Rsi, Role::Rsi) => EdgeClass::RsiRsi,
            (Role::Vehicle, Role::Vehicle) => EdgeClass::VehicleVehicle,
            _ => EdgeClass::VehicleRsi,
        }
    }

    /// Physical connectivity at `t`, ignoring partitions.
    pub fn in_range(&self, a: NodeId, b: NodeId, t: Timestamp) -> bool {
        match (self.role(a), self.role(b)) {
            (Role::Rsi, Role::Rsi) => self.peers[a.index()].contains(&b),
            (Role::Vehicle, Role::Rsi) => self.covered(a, t),
            (Role::Rsi, Role::Vehicle) => self.covered(b, t),
            (Role::Vehicle, Role::Vehicle) => {
                self.position(a, t).distance(&self.position(b, t)) <= self.topology.v2v_range
            }
        }
    }

    pub fn link_up(&self, a: NodeId, b: NodeId, t: Timestamp) -> bool {
        a != b && self.in_range(a, b, t) && !self.link.partitioned(a, b, t)
    }

    /// What a sender can know before transmitting: the link is up now and
    /// no scheduled partition will cut it before the message could land.
    pub fn reachable(&self, a: NodeId, b: NodeId, t: Timestamp) -> bool {
        if !self.link_up(a, b, t) {
            return false;
        }
        let (_, hi) = self.link.latency(self.edge_class(a, b)).bounds();
        !self.link.partitioned_during(a, b, t, t + hi)
    }
}
