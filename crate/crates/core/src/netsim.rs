//! Sensor-field model: node placement, radio adjacency, seeded random
//! streams and the transmission log shared by every routing experiment.
//!
//! Time is measured in integer ticks; one hop costs one tick.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Placement attempts made by [`build_random_geometric`] before giving up.
pub const PLACEMENT_RETRY_BUDGET: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("node {0} is not part of the topology")]
    InvalidNode(NodeId),
    #[error("topology is disconnected: {reachable} of {total} nodes reachable from node 0")]
    Disconnected { reachable: usize, total: usize },
    #[error("no connected placement found after {0} attempts")]
    ConnectivityFailure(usize),
    #[error("topology document: {0}")]
    Document(String),
}

/// Dense node index in `[0, node_count)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
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

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Immutable sensor field. Adjacency is the unit-disk relation over
/// `positions` with radius `radio_range`, kept sorted per node.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    positions: Vec<Position>,
    radio_range: f64,
    adjacency: Vec<Vec<NodeId>>,
    sink: NodeId,
    sources: Vec<NodeId>,
    grid_width: Option<usize>,
}

/// Replayable text form of a topology. Adjacency is not stored; it is
/// recomputed from positions and range on import.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub radio_range: f64,
    pub sink: NodeId,
    #[serde(default)]
    pub sources: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_width: Option<usize>,
    pub positions: Vec<Position>,
}

impl Topology {
    /// Builds a topology from explicit positions; the result must be connected.
    pub fn from_positions(positions: Vec<Position>, radio_range: f64) -> Result<Self, NetError> {
        if positions.is_empty() {
            return Err(NetError::InvalidParameter {
                field: "node_count",
                reason: "at least one node is required".into(),
            });
        }
        if !(radio_range > 0.0) || !radio_range.is_finite() {
            return Err(NetError::InvalidParameter {
                field: "radio_range",
                reason: format!("must be a positive finite distance, got {radio_range}"),
            });
        }
        let adjacency = unit_disk_adjacency(&positions, radio_range);
        let topo = Topology {
            positions,
            radio_range,
            adjacency,
            sink: NodeId(0),
            sources: Vec::new(),
            grid_width: None,
        };
        let reachable = topo.reachable_count(NodeId(0));
        if reachable != topo.node_count() {
            return Err(NetError::Disconnected {
                reachable,
                total: topo.node_count(),
            });
        }
        Ok(topo)
    }

    /// Assigns the sink (home gateway) and source roles.
    pub fn with_roles(mut self, sink: NodeId, sources: Vec<NodeId>) -> Result<Self, NetError> {
        self.check(sink)?;
        for &s in &sources {
            self.check(s)?;
        }
        self.sink = sink;
        self.sources = sources;
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.node_count()).map(NodeId::from)
    }

    pub fn radio_range(&self) -> f64 {
        self.radio_range
    }

    pub fn sink(&self) -> NodeId {
        self.sink
    }

    pub fn sources(&self) -> &[NodeId] {
        &self.sources
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn position(&self, node: NodeId) -> Result<Position, NetError> {
        self.check(node)?;
        Ok(self.positions[node.index()])
    }

    /// Lattice coordinates of `node` for grid-built topologies.
    pub fn grid_coords(&self, node: NodeId) -> Option<(usize, usize)> {
        let w = self.grid_width?;
        (node.index() < self.node_count()).then(|| (node.index() % w, node.index() / w))
    }

    /// Node at lattice coordinates `(x, y)` for grid-built topologies.
    pub fn grid_node(&self, x: usize, y: usize) -> Option<NodeId> {
        let w = self.grid_width?;
        let idx = y * w + x;
        (x < w && idx < self.node_count()).then(|| NodeId::from(idx))
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.index() < self.node_count()
    }

    pub(crate) fn check(&self, node: NodeId) -> Result<(), NetError> {
        if self.contains(node) {
            Ok(())
        } else {
            Err(NetError::InvalidNode(node))
        }
    }

    /// Sorted neighbor list; panics on an out-of-range node.
    pub(crate) fn adj(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node.index()]
    }

    pub fn are_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.contains(a) && self.adj(a).binary_search(&b).is_ok()
    }

    /// Hop distances from `from` to every node (`u32::MAX` when unreachable).
    pub fn hop_distances(&self, from: NodeId) -> Result<Vec<u32>, NetError> {
        self.check(from)?;
        let mut dist = vec![u32::MAX; self.node_count()];
        let mut queue = VecDeque::from([from]);
        dist[from.index()] = 0;
        while let Some(u) = queue.pop_front() {
            let du = dist[u.index()];
            for &v in self.adj(u) {
                if dist[v.index()] == u32::MAX {
                    dist[v.index()] = du + 1;
                    queue.push_back(v);
                }
            }
        }
        Ok(dist)
    }

    /// A shortest path `from → to`, lowest-id neighbors first on ties.
    pub fn shortest_path(&self, from: NodeId, to: NodeId) -> Result<Vec<NodeId>, NetError> {
        self.check(from)?;
        let dist = self.hop_distances(to)?;
        if dist[from.index()] == u32::MAX {
            return Err(NetError::Disconnected {
                reachable: dist.iter().filter(|d| **d != u32::MAX).count(),
                total: self.node_count(),
            });
        }
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            let d = dist[cur.index()];
            cur = *self
                .adj(cur)
                .iter()
                .find(|v| dist[v.index()] + 1 == d)
                .expect("BFS layer must have a predecessor");
            path.push(cur);
        }
        Ok(path)
    }

    fn reachable_count(&self, from: NodeId) -> usize {
        self.hop_distances(from)
            .map(|d| d.iter().filter(|x| **x != u32::MAX).count())
            .unwrap_or(0)
    }

    pub fn to_document(&self) -> TopologyDocument {
        TopologyDocument {
            radio_range: self.radio_range,
            sink: self.sink,
            sources: self.sources.clone(),
            grid_width: self.grid_width,
            positions: self.positions.clone(),
        }
    }

    pub fn from_document(doc: TopologyDocument) -> Result<Self, NetError> {
        let mut topo = Topology::from_positions(doc.positions, doc.radio_range)?;
        if let Some(w) = doc.grid_width {
            if w == 0 || topo.node_count() % w != 0 {
                return Err(NetError::Document(format!(
                    "grid_width {w} does not divide node count {}",
                    topo.node_count()
                )));
            }
            topo.grid_width = Some(w);
        }
        topo.with_roles(doc.sink, doc.sources)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("topology serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let doc: TopologyDocument =
            serde_json::from_str(text).map_err(|e| NetError::Document(e.to_string()))?;
        Topology::from_document(doc)
    }
}

/// Neighbor sets via a uniform bucket grid with cell side `range`, so only
/// the 3x3 surrounding cells are compared.
fn unit_disk_adjacency(positions: &[Position], range: f64) -> Vec<Vec<NodeId>> {
    use std::collections::HashMap;
    let cell = |p: &Position| ((p.x / range).floor() as i64, (p.y / range).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        buckets.entry(cell(p)).or_default().push(i);
    }
    let mut adjacency = vec![Vec::new(); positions.len()];
    for (i, p) in positions.iter().enumerate() {
        let (cx, cy) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = buckets.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in bucket {
                    if j != i && p.distance(&positions[j]) <= range {
                        adjacency[i].push(NodeId::from(j));
                    }
                }
            }
        }
        adjacency[i].sort_unstable();
    }
    adjacency
}

/// `width × height` nodes on the unit lattice; node `(x, y)` has id `y·width + x`.
/// The sink defaults to node 0.
pub fn build_grid(width: usize, height: usize, radio_range: f64) -> Result<Topology, NetError> {
    if width == 0 {
        return Err(NetError::InvalidParameter {
            field: "width",
            reason: "must be at least 1".into(),
        });
    }
    if height == 0 {
        return Err(NetError::InvalidParameter {
            field: "height",
            reason: "must be at least 1".into(),
        });
    }
    let positions = (0..height)
        .flat_map(|y| {
            (0..width).map(move |x| Position {
                x: x as f64,
                y: y as f64,
            })
        })
        .collect();
    let mut topo = Topology::from_positions(positions, radio_range)?;
    topo.grid_width = Some(width);
    Ok(topo)
}

/// Uniform placement of `node_count` nodes in a square of side `area_side`,
/// redrawn until the unit-disk graph is connected.
pub fn build_random_geometric(
    node_count: usize,
    area_side: f64,
    radio_range: f64,
    rng: &mut SimRng,
) -> Result<Topology, NetError> {
    if node_count == 0 {
        return Err(NetError::InvalidParameter {
            field: "node_count",
            reason: "must be at least 1".into(),
        });
    }
    if !(area_side > 0.0) {
        return Err(NetError::InvalidParameter {
            field: "area_side",
            reason: format!("must be positive, got {area_side}"),
        });
    }
    for _ in 0..PLACEMENT_RETRY_BUDGET {
        let positions = (0..node_count)
            .map(|_| Position {
                x: rng.random_range(0.0..area_side),
                y: rng.random_range(0.0..area_side),
            })
            .collect();
        match Topology::from_positions(positions, radio_range) {
            Ok(t) => return Ok(t),
            Err(NetError::Disconnected { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(NetError::ConnectivityFailure(PLACEMENT_RETRY_BUDGET))
}

/// Sorted neighbor set of `node`.
pub fn neighbors(topology: &Topology, node: NodeId) -> Result<Vec<NodeId>, NetError> {
    topology.check(node)?;
    Ok(topology.adj(node).to_vec())
}

/// Deterministic random stream identified by `(master_seed, label)`.
///
/// The ChaCha key is SHA-256 over the seed and label, so distinct labels give
/// unrelated streams and the same pair always replays the same sequence.
#[derive(Clone, Debug)]
pub struct SimRng {
    master_seed: u64,
    label: String,
    inner: ChaCha12Rng,
}

impl SimRng {
    pub fn new(master_seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let mut h = Sha256::new();
        h.update(master_seed.to_le_bytes());
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        let seed: [u8; 32] = h.finalize().into();
        SimRng {
            master_seed,
            label,
            inner: ChaCha12Rng::from_seed(seed),
        }
    }

    /// Child stream `"{label}/{child}"` under the same master seed.
    pub fn fork(&self, child: &str) -> SimRng {
        SimRng::new(self.master_seed, format!("{}/{}", self.label, child))
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl RngCore for SimRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// One radio broadcast. Every neighbor of `from` hears it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transmission {
    pub tick: u64,
    pub from: NodeId,
    pub payload_id: u64,
    pub hearers: Vec<NodeId>,
}

/// Append-only transmission record with non-decreasing ticks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmissionLog {
    entries: Vec<Transmission>,
}

impl TransmissionLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a broadcast by `from` at `tick`.
    pub fn broadcast(&mut self, topology: &Topology, tick: u64, from: NodeId, payload_id: u64) {
        if let Some(last) = self.entries.last() {
            assert!(tick >= last.tick, "transmission ticks must not go backwards");
        }
        self.entries.push(Transmission {
            tick,
            from,
            payload_id,
            hearers: topology.adj(from).to_vec(),
        });
    }

    pub fn entries(&self) -> &[Transmission] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_tick(&self) -> Option<u64> {
        self.entries.last().map(|t| t.tick)
    }

    pub fn extend_from(&mut self, other: TransmissionLog) {
        for t in other.entries {
            if let Some(last) = self.entries.last() {
                assert!(t.tick >= last.tick, "transmission ticks must not go backwards");
            }
            self.entries.push(t);
        }
    }
}
