//! End-to-end message flow from the sources to the home gateway (HG).
//!
//! The privacy level picks the layers. Layer 2 clusters two sources with an
//! aggregator-forwarder (AF); the AF learns only `x + y` and becomes the
//! origin of the outbound message. Layer 1 replaces shortest-path delivery
//! of that message with the configured anonymity routing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keymgmt::{generate_pool, KeyError, KeyId, KeyPool, Wire, WireMessage, DEFAULT_AF_BANK, DEFAULT_POOL_SIZE};
use crate::netsim::{build_grid, build_random_geometric, NetError, NodeId, SimRng, Topology};
use crate::phantom::{build_receptor, route_flood, route_phantom, route_shortest, route_two_way, MessageRoute, PhantomError, ReceptorPath, Strategy, WalkConfig};
use crate::ppda::{Field, FieldElem, PpdaError, RoundTranscript, SppdaCluster, DEFAULT_MODULUS};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("no node can serve as aggregator for {0} and {1}")]
    NoAfCandidate(NodeId, NodeId),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Routing(#[from] PhantomError),
    #[error(transparent)]
    Keys(#[from] KeyError),
    #[error(transparent)]
    Aggregation(#[from] PpdaError),
}

fn config_err(field: &'static str, reason: impl Into<String>) -> PipelineError {
    PipelineError::Config {
        field,
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyLevel {
    None,
    AnonymityOnly,
    PerturbationOnly,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Layer {
    /// Source-location anonymity routing.
    L1,
    /// Data perturbation and aggregation.
    L2,
}

pub fn select_layers(level: PrivacyLevel) -> BTreeSet<Layer> {
    match level {
        PrivacyLevel::None => BTreeSet::new(),
        PrivacyLevel::AnonymityOnly => [Layer::L1].into(),
        PrivacyLevel::PerturbationOnly => [Layer::L2].into(),
        PrivacyLevel::Full => [Layer::L1, Layer::L2].into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologySpec {
    Grid { width: usize, height: usize, radio_range: f64 },
    Random { nodes: usize, side: f64, radio_range: f64 },
}

impl TopologySpec {
    pub fn build(&self, rng: &mut SimRng) -> Result<Topology, NetError> {
        match *self {
            TopologySpec::Grid {
                width,
                height,
                radio_range,
            } => build_grid(width, height, radio_range),
            TopologySpec::Random {
                nodes,
                side,
                radio_range,
            } => build_random_geometric(nodes, side, radio_range, rng),
        }
    }
}

/// A private reading held by one source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reading {
    pub node: NodeId,
    pub value: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub s1: NodeId,
    pub s2: NodeId,
    pub af: NodeId,
    /// The AF's own contribution, removed again after the solve.
    #[serde(default)]
    pub z: u64,
}

fn default_sink() -> NodeId {
    NodeId(0)
}

fn default_anonymity() -> Strategy {
    Strategy::Phantom(WalkConfig::pure(10))
}

fn default_modulus() -> u64 {
    DEFAULT_MODULUS
}

fn default_pool_size() -> usize {
    DEFAULT_POOL_SIZE
}

fn default_af_bank() -> usize {
    DEFAULT_AF_BANK
}

fn default_budget() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub topology: TopologySpec,
    #[serde(default = "default_sink")]
    pub sink: NodeId,
    pub level: PrivacyLevel,
    /// Layer-1 routing; the walk config or the receptor length lives here.
    #[serde(default = "default_anonymity")]
    pub anonymity: Strategy,
    #[serde(default = "default_modulus")]
    pub modulus: u64,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_af_bank")]
    pub af_bank: usize,
    #[serde(default)]
    pub readings: Vec<Reading>,
    #[serde(default)]
    pub clusters: Vec<ClusterSpec>,
    /// Derive clusters with [`pair_sources`] when none are listed.
    #[serde(default)]
    pub auto_pair: bool,
    /// Messages sent per flow.
    #[serde(default = "default_budget")]
    pub message_budget: u32,
    pub master_seed: u64,
}

impl PipelineConfig {
    /// A grid run with default key, routing and field parameters.
    pub fn grid(width: usize, height: usize, level: PrivacyLevel, master_seed: u64) -> Self {
        PipelineConfig {
            topology: TopologySpec::Grid {
                width,
                height,
                radio_range: 1.0,
            },
            sink: default_sink(),
            level,
            anonymity: default_anonymity(),
            modulus: DEFAULT_MODULUS,
            pool_size: DEFAULT_POOL_SIZE,
            af_bank: DEFAULT_AF_BANK,
            readings: Vec::new(),
            clusters: Vec::new(),
            auto_pair: false,
            message_budget: 1,
            master_seed,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that does not need the built topology.
    pub fn validate(&self) -> Result<(), PipelineError> {
        Field::new(self.modulus).map_err(|e| config_err("modulus", e.to_string()))?;
        if self.message_budget == 0 {
            return Err(config_err("message_budget", "must be at least 1"));
        }
        let mut seen = BTreeSet::new();
        for r in &self.readings {
            if !seen.insert(r.node) {
                return Err(config_err("readings", format!("node {} has two readings", r.node)));
            }
        }
        if let Strategy::Phantom(WalkConfig { hops: 0, .. }) = self.anonymity {
            return Err(config_err("anonymity", "phantom walk needs at least one hop"));
        }
        if select_layers(self.level).contains(&Layer::L2) {
            if self.clusters.is_empty() && !self.auto_pair {
                return Err(config_err("clusters", format!("level {:?} needs at least one cluster", self.level)));
            }
            for c in &self.clusters {
                if c.af == c.s1 || c.af == c.s2 || c.s1 == c.s2 {
                    return Err(config_err("clusters", format!("members of cluster ({}, {}, {}) must be distinct", c.s1, c.s2, c.af)));
                }
                for s in [c.s1, c.s2] {
                    if !seen.contains(&s) {
                        return Err(config_err("readings", format!("clustered source {s} has no reading")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairing {
    pub clusters: Vec<ClusterSpec>,
    pub unpaired: Vec<NodeId>,
}

/// Greedy clustering: repeatedly joins the two closest unpaired sources (hop
/// distance, ties by id) and picks their AF. The AF is a common neighbor,
/// preferring nodes that are neither sources nor already AFs, or else the
/// node nearest the pair's midpoint.
pub fn pair_sources(sources: &[NodeId], topology: &Topology) -> Result<Pairing, PipelineError> {
    if sources.len() < 2 {
        return Err(config_err("sources", format!("pairing needs at least 2 sources, got {}", sources.len())));
    }
    let mut sorted: Vec<NodeId> = sources.to_vec();
    sorted.sort();
    sorted.dedup();
    let dist: BTreeMap<NodeId, Vec<u32>> = sorted
        .iter()
        .map(|&s| topology.hop_distances(s).map(|d| (s, d)))
        .collect::<Result<_, _>>()?;
    let mut candidates = Vec::new();
    for (i, &a) in sorted.iter().enumerate() {
        for &b in &sorted[i + 1..] {
            candidates.push((dist[&a][b.index()], a, b));
        }
    }
    candidates.sort();

    let source_set: BTreeSet<NodeId> = sorted.iter().copied().collect();
    let mut paired = BTreeSet::new();
    let mut afs = BTreeSet::new();
    let mut clusters = Vec::new();
    for (_, a, b) in candidates {
        if paired.contains(&a) || paired.contains(&b) {
            continue;
        }
        let af = choose_af(topology, a, b, &source_set, &afs)?;
        paired.insert(a);
        paired.insert(b);
        afs.insert(af);
        clusters.push(ClusterSpec { s1: a, s2: b, af, z: 0 });
    }
    let unpaired = sorted.into_iter().filter(|s| !paired.contains(s)).collect();
    Ok(Pairing { clusters, unpaired })
}

fn choose_af(
    topology: &Topology,
    a: NodeId,
    b: NodeId,
    sources: &BTreeSet<NodeId>,
    afs: &BTreeSet<NodeId>,
) -> Result<NodeId, PipelineError> {
    // lower rank is better: free relay, then used AF, then another source
    let rank = |n: NodeId| (sources.contains(&n) as u8) * 2 + afs.contains(&n) as u8;
    let common = topology
        .nodes()
        .filter(|&n| n != a && n != b && topology.are_adjacent(n, a) && topology.are_adjacent(n, b))
        .min_by_key(|&n| (rank(n), n));
    if let Some(n) = common {
        return Ok(n);
    }
    let (pa, pb) = (topology.position(a)?, topology.position(b)?);
    let mid = crate::netsim::Position {
        x: (pa.x + pb.x) / 2.0,
        y: (pa.y + pb.y) / 2.0,
    };
    topology
        .nodes()
        .filter(|&n| n != a && n != b)
        .map(|n| (rank(n), topology.position(n).expect("node in topology").distance(&mid), n))
        .min_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.cmp(&y.2)))
        .map(|(_, _, n)| n)
        .ok_or(PipelineError::NoAfCandidate(a, b))
}

/// What the HG stores for one delivered message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Raw,
    Aggregate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HgRecord {
    pub message: u32,
    pub origin: NodeId,
    pub kind: RecordKind,
    pub value: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub message: u32,
    pub level: PrivacyLevel,
    pub origin: NodeId,
    pub delivered: bool,
    pub route_length: u32,
    pub transmissions: u64,
    pub latency_hops: u32,
    /// Index into [`DeliveryReport::transcripts`] for layer-2 messages.
    pub transcript: Option<usize>,
}

/// Keys an AF holds after the run, compared against the source↔source bank.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AfInventory {
    pub af: NodeId,
    pub held_keys: Vec<KeyId>,
    pub bank_ss_keys_held: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeliveryReport {
    pub level: PrivacyLevel,
    pub layers: BTreeSet<Layer>,
    pub sink: NodeId,
    pub messages: Vec<MessageRecord>,
    pub hg_records: Vec<HgRecord>,
    pub transcripts: Vec<RoundTranscript>,
    pub af_inventory: Vec<AfInventory>,
    pub clusters: Vec<ClusterSpec>,
    pub unpaired: Vec<NodeId>,
}

impl DeliveryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One CSV row per message, in send order.
    pub fn messages_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for m in &self.messages {
            w.serialize(m)?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Every plaintext data value on the wire across all transcripts.
    /// Key-index announcements carry no data and are not included.
    pub fn plaintext_values(&self) -> impl Iterator<Item = u64> + '_ {
        self.transcripts.iter().flat_map(|t| &t.frames).flat_map(|r| match &r.message {
            WireMessage::Plain(p) => p.values.clone(),
            _ => Vec::new(),
        })
    }

    /// Frames whose plaintext fields contain any of `secrets`.
    pub fn leaks(&self, secrets: &[u64]) -> Vec<u64> {
        self.plaintext_values().filter(|v| secrets.contains(v)).collect()
    }
}

/// Result of one cluster's aggregation.
#[derive(Clone, Debug)]
pub struct ClusterOutcome {
    pub spec: ClusterSpec,
    pub pair_sum: FieldElem,
    pub transcript: RoundTranscript,
    pub inventory: AfInventory,
}

/// Runs key setup and one SPPDA round per cluster over a shared pool.
pub fn run_layer2(
    pool: &KeyPool,
    clusters: &[ClusterSpec],
    readings: &BTreeMap<NodeId, u64>,
    field: Field,
    rng: &mut SimRng,
) -> Result<Vec<ClusterOutcome>, PipelineError> {
    let bank_ss: BTreeSet<KeyId> = pool.bank_ss.ids().collect();
    clusters
        .iter()
        .map(|c| {
            let value = |n: NodeId| {
                readings
                    .get(&n)
                    .map(|v| field.elem(*v))
                    .ok_or_else(|| config_err("readings", format!("clustered source {n} has no reading")))
            };
            let (x, y) = (value(c.s1)?, value(c.s2)?);
            let mut wire = Wire::new();
            let mut crng = rng.fork(&format!("cluster/{}", c.af));
            let mut cluster = SppdaCluster::setup(pool, c.af, c.s1, c.s2, &mut wire, &mut crng)?;
            let round = cluster.run_round(field, x, y, field.elem(c.z), &mut wire, &mut crng)?;
            let held = cluster.af.held_key_ids();
            Ok(ClusterOutcome {
                spec: *c,
                pair_sum: round.result.pair_sum,
                transcript: round.transcript,
                inventory: AfInventory {
                    af: c.af,
                    bank_ss_keys_held: held.iter().filter(|k| bank_ss.contains(k)).count(),
                    held_keys: held,
                },
            })
        })
        .collect()
}

fn route(
    topology: &Topology,
    origin: NodeId,
    layers: &BTreeSet<Layer>,
    strategy: Strategy,
    receptor: Option<&ReceptorPath>,
    rng: &mut SimRng,
) -> Result<MessageRoute, PhantomError> {
    let sink = topology.sink();
    if !layers.contains(&Layer::L1) {
        return route_shortest(topology, origin, sink);
    }
    match strategy {
        Strategy::FloodOnly => route_flood(topology, origin, sink),
        Strategy::Phantom(cfg) => route_phantom(topology, origin, sink, cfg, rng),
        Strategy::TwoWay { max_steps, .. } => {
            route_two_way(topology, origin, receptor.expect("receptor built for two-way"), rng, max_steps)
        }
    }
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<DeliveryReport, PipelineError> {
    config.validate()?;
    let root = SimRng::new(config.master_seed, "pipeline");
    let field = Field::new(config.modulus)?;
    let layers = select_layers(config.level);
    let sources: Vec<NodeId> = config.readings.iter().map(|r| r.node).collect();
    let topology = config
        .topology
        .build(&mut root.fork("topology"))?
        .with_roles(config.sink, sources.clone())?;
    let readings: BTreeMap<NodeId, u64> = config.readings.iter().map(|r| (r.node, r.value)).collect();

    let mut clusters = config.clusters.clone();
    let mut unpaired = Vec::new();
    if layers.contains(&Layer::L2) {
        if clusters.is_empty() {
            let pairing = pair_sources(&sources, &topology)?;
            clusters = pairing.clusters;
            unpaired = pairing.unpaired;
        } else {
            let clustered: BTreeSet<NodeId> = clusters.iter().flat_map(|c| [c.s1, c.s2]).collect();
            unpaired = sources.iter().copied().filter(|s| !clustered.contains(s)).collect();
        }
        if clusters.is_empty() {
            return Err(config_err("clusters", "no cluster could be formed"));
        }
        for c in &clusters {
            for n in [c.s1, c.s2, c.af] {
                if !topology.contains(n) {
                    return Err(NetError::InvalidNode(n).into());
                }
            }
        }
    }

    let receptor = match (layers.contains(&Layer::L1), config.anonymity) {
        (true, Strategy::TwoWay { receptor_length, .. }) => {
            Some(build_receptor(&topology, topology.sink(), receptor_length, &mut root.fork("receptor"))?)
        }
        _ => None,
    };
    let pool = if layers.contains(&Layer::L2) {
        Some(generate_pool(config.pool_size, config.af_bank, &mut root.fork("pool"))?)
    } else {
        None
    };

    let mut report = DeliveryReport {
        level: config.level,
        layers: layers.clone(),
        sink: topology.sink(),
        messages: Vec::new(),
        hg_records: Vec::new(),
        transcripts: Vec::new(),
        af_inventory: Vec::new(),
        clusters: if layers.contains(&Layer::L2) { clusters.clone() } else { Vec::new() },
        unpaired,
    };
    let mut route_rng = root.fork("route");
    for message in 0..config.message_budget {
        // (origin, value, kind, transcript)
        let mut flows = Vec::new();
        if let Some(pool) = &pool {
            let mut l2rng = root.fork(&format!("layer2/{message}"));
            for outcome in run_layer2(pool, &clusters, &readings, field, &mut l2rng)? {
                report.transcripts.push(outcome.transcript);
                if message == 0 {
                    report.af_inventory.push(outcome.inventory);
                }
                flows.push((outcome.spec.af, outcome.pair_sum.value(), RecordKind::Aggregate, Some(report.transcripts.len() - 1)));
            }
        } else {
            for r in &config.readings {
                flows.push((r.node, field.elem(r.value).value(), RecordKind::Raw, None));
            }
        }
        for (origin, value, kind, transcript) in flows {
            let r = route(&topology, origin, &layers, config.anonymity, receptor.as_ref(), &mut route_rng)?;
            report.messages.push(MessageRecord {
                message,
                level: config.level,
                origin,
                delivered: r.delivered,
                route_length: r.unicast_path.len().saturating_sub(1) as u32,
                transmissions: r.transmissions,
                latency_hops: r.latency_hops,
                transcript,
            });
            if r.delivered {
                report.hg_records.push(HgRecord {
                    message,
                    origin,
                    kind,
                    value,
                });
            }
        }
    }
    Ok(report)
}
