//! Source-location anonymity: phantom routing (random walk then flooding),
//! the two-way receptor variant, flooding-zone sizing, and a patient
//! back-tracing adversary used to measure safety periods.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::{NetError, NodeId, SimRng, Topology, TransmissionLog};

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("walk did not reach the receptor within {max_steps} steps")]
    NoRendezvous { max_steps: u32 },
    #[error("C({n}, {h}) does not fit in 64 bits")]
    Overflow { n: u64, h: u64 },
    #[error("binomial domain error: H = {h} exceeds N = {n}")]
    Domain { n: u64, h: u64 },
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("topology has no source role assigned")]
    NoSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WalkMode {
    Pure,
    Directed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub mode: WalkMode,
    pub hops: u32,
}

impl WalkConfig {
    pub fn pure(hops: u32) -> Self {
        WalkConfig {
            mode: WalkMode::Pure,
            hops,
        }
    }

    pub fn directed(hops: u32) -> Self {
        WalkConfig {
            mode: WalkMode::Directed,
            hops,
        }
    }
}

/// Routing strategy for a source's messages toward the sink.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    FloodOnly,
    Phantom(WalkConfig),
    TwoWay { receptor_length: u32, max_steps: u32 },
}

impl Strategy {
    /// Default step budget for the two-way source walk.
    pub const DEFAULT_MAX_STEPS: u32 = 10_000;

    pub fn two_way(receptor_length: u32) -> Self {
        Strategy::TwoWay {
            receptor_length,
            max_steps: Self::DEFAULT_MAX_STEPS,
        }
    }

    /// Short label used in CSV output: `flood`, `phantom`, `twoway`.
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::FloodOnly => "flood",
            Strategy::Phantom(_) => "phantom",
            Strategy::TwoWay { .. } => "twoway",
        }
    }

    /// Walk length parameter: random-walk hops or receptor length.
    pub fn walk_hops(&self) -> u32 {
        match self {
            Strategy::FloodOnly => 0,
            Strategy::Phantom(cfg) => cfg.hops,
            Strategy::TwoWay {
                receptor_length, ..
            } => *receptor_length,
        }
    }
}

/// Ordered node list ending at the destination. Consecutive nodes are
/// adjacent and no node repeats.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceptorPath {
    nodes: Vec<NodeId>,
}

impl ReceptorPath {
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    /// Hop count of the path.
    pub fn length(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn destination(&self) -> NodeId {
        *self.nodes.last().expect("receptor path is never empty")
    }

    fn index_map(&self) -> HashMap<NodeId, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect()
    }
}

/// A single hop-level emission: `from` broadcast at `tick` (relative).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Emission {
    tick: u64,
    from: NodeId,
}

fn to_log(topology: &Topology, emissions: &[Emission], base: u64, payload: u64) -> TransmissionLog {
    let mut log = TransmissionLog::new();
    for e in emissions {
        log.broadcast(topology, base + e.tick, e.from, payload);
    }
    log
}

/// One random-walk step from `cur`, avoiding `prev` when another neighbor exists.
fn pure_step(topology: &Topology, cur: NodeId, prev: Option<NodeId>, rng: &mut SimRng) -> Option<NodeId> {
    let adj = topology.adj(cur);
    let forward: Vec<NodeId> = adj.iter().copied().filter(|n| Some(*n) != prev).collect();
    if forward.is_empty() {
        adj.choose(rng).copied()
    } else {
        forward.choose(rng).copied()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Half {
    Away,
    Toward,
}

fn axis_component(topology: &Topology, from: NodeId, to: NodeId, axis: (f64, f64)) -> f64 {
    let a = topology.position(from).expect("valid node");
    let b = topology.position(to).expect("valid node");
    (b.x - a.x) * axis.0 + (b.y - a.y) * axis.1
}

fn half_members(topology: &Topology, cur: NodeId, axis: (f64, f64), half: Half) -> Vec<NodeId> {
    topology
        .adj(cur)
        .iter()
        .copied()
        .filter(|n| {
            let c = axis_component(topology, cur, *n, axis);
            match half {
                Half::Away => c < 0.0,
                Half::Toward => c > 0.0,
            }
        })
        .collect()
}

/// Random walk of `cfg.hops` hops from `source`; the last node is the phantom
/// source. `destination` fixes the axis used by [`WalkMode::Directed`].
///
/// Directed walks pick one half of the neighbor partition at the source (the
/// half pointing away from the destination, or the opposite half when the
/// source has no neighbor on the away side) and keep sampling from that half,
/// falling back to a pure step where the half is empty. A walk on a graph with
/// no edges stops early.
pub fn random_walk(
    topology: &Topology,
    source: NodeId,
    destination: NodeId,
    cfg: WalkConfig,
    rng: &mut SimRng,
) -> Result<Vec<NodeId>, PhantomError> {
    topology.check(source)?;
    topology.check(destination)?;
    let mut path = Vec::with_capacity(cfg.hops as usize + 1);
    path.push(source);

    let directed = match cfg.mode {
        WalkMode::Pure => None,
        WalkMode::Directed => {
            let s = topology.position(source)?;
            let d = topology.position(destination)?;
            let axis = (d.x - s.x, d.y - s.y);
            if axis == (0.0, 0.0) {
                None
            } else if half_members(topology, source, axis, Half::Away).is_empty() {
                Some((axis, Half::Toward))
            } else {
                Some((axis, Half::Away))
            }
        }
    };

    let mut prev = None;
    let mut cur = source;
    for _ in 0..cfg.hops {
        let next = match directed {
            Some((axis, half)) => {
                let members = half_members(topology, cur, axis, half);
                match members.choose(rng) {
                    Some(n) => Some(*n),
                    None => pure_step(topology, cur, prev, rng),
                }
            }
            None => pure_step(topology, cur, prev, rng),
        };
        let Some(next) = next else { break };
        path.push(next);
        prev = Some(cur);
        cur = next;
    }
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FloodOutcome {
    pub delivered: bool,
    pub transmissions: u64,
    pub latency_hops: u32,
    pub log: TransmissionLog,
}

/// Breadth-first emissions of a flood from `origin`: every reached node other
/// than `destination` rebroadcasts once, at its hop distance from `origin`.
fn flood_emissions(
    topology: &Topology,
    origin: NodeId,
    destination: NodeId,
) -> Result<(Vec<Emission>, Option<u32>), PhantomError> {
    if origin == destination {
        return Ok((Vec::new(), Some(0)));
    }
    let dist = topology.hop_distances(origin)?;
    topology.check(destination)?;
    let mut order: Vec<NodeId> = topology
        .nodes()
        .filter(|n| dist[n.index()] != u32::MAX && *n != destination)
        .collect();
    order.sort_by_key(|n| (dist[n.index()], *n));
    let emissions = order
        .into_iter()
        .map(|n| Emission {
            tick: dist[n.index()] as u64,
            from: n,
        })
        .collect();
    let latency = dist[destination.index()];
    Ok((emissions, (latency != u32::MAX).then_some(latency)))
}

/// Floods a message from `origin` over its whole connected component.
pub fn flood(topology: &Topology, origin: NodeId, destination: NodeId) -> Result<FloodOutcome, PhantomError> {
    topology.check(origin)?;
    topology.check(destination)?;
    let (emissions, latency) = flood_emissions(topology, origin, destination)?;
    Ok(FloodOutcome {
        delivered: latency.is_some(),
        transmissions: emissions.len() as u64,
        latency_hops: latency.unwrap_or(0),
        log: to_log(topology, &emissions, 0, 0),
    })
}

/// Lays a self-avoiding random walk of up to `length` hops outward from
/// `destination` and returns it oriented toward `destination`. The walk is
/// truncated if it traps itself.
pub fn build_receptor(
    topology: &Topology,
    destination: NodeId,
    length: u32,
    rng: &mut SimRng,
) -> Result<ReceptorPath, PhantomError> {
    topology.check(destination)?;
    let mut nodes = vec![destination];
    let mut visited = vec![false; topology.node_count()];
    visited[destination.index()] = true;
    let mut cur = destination;
    for _ in 0..length {
        let open: Vec<NodeId> = topology
            .adj(cur)
            .iter()
            .copied()
            .filter(|n| !visited[n.index()])
            .collect();
        let Some(&next) = open.choose(rng) else { break };
        visited[next.index()] = true;
        nodes.push(next);
        cur = next;
    }
    nodes.reverse();
    Ok(ReceptorPath { nodes })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TwoWayRoute {
    pub route: Vec<NodeId>,
    pub transmissions: u64,
    pub latency_hops: u32,
}

fn two_way_route(
    topology: &Topology,
    source: NodeId,
    receptor: &ReceptorPath,
    index: &HashMap<NodeId, usize>,
    rng: &mut SimRng,
    max_steps: u32,
) -> Result<Vec<NodeId>, Vec<NodeId>> {
    let mut route = vec![source];
    let mut prev = None;
    let mut cur = source;
    let mut steps = 0;
    loop {
        if let Some(&i) = index.get(&cur) {
            route.extend_from_slice(&receptor.nodes[i + 1..]);
            return Ok(route);
        }
        if steps == max_steps {
            return Err(route);
        }
        let Some(next) = pure_step(topology, cur, prev, rng) else {
            return Err(route);
        };
        route.push(next);
        prev = Some(cur);
        cur = next;
        steps += 1;
    }
}

/// Walks randomly from `source` until the walk touches the receptor, then
/// follows the receptor to its destination.
pub fn deliver_two_way(
    topology: &Topology,
    source: NodeId,
    receptor: &ReceptorPath,
    rng: &mut SimRng,
    max_steps: u32,
) -> Result<TwoWayRoute, PhantomError> {
    topology.check(source)?;
    for n in &receptor.nodes {
        topology.check(*n)?;
    }
    let index = receptor.index_map();
    match two_way_route(topology, source, receptor, &index, rng, max_steps) {
        Ok(route) => {
            let hops = route.len() as u64 - 1;
            Ok(TwoWayRoute {
                transmissions: hops,
                latency_hops: hops as u32,
                route,
            })
        }
        Err(_) => Err(PhantomError::NoRendezvous { max_steps }),
    }
}

/// Unicast emissions along `route`: each node but the last forwards once.
fn path_emissions(route: &[NodeId], start_tick: u64) -> Vec<Emission> {
    route[..route.len().saturating_sub(1)]
        .iter()
        .enumerate()
        .map(|(i, n)| Emission {
            tick: start_tick + i as u64,
            from: *n,
        })
        .collect()
}

/// Result of routing one message under a strategy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageRoute {
    pub delivered: bool,
    pub transmissions: u64,
    pub latency_hops: u32,
    /// Hop-by-hop path of the unicast part (walk and receptor); the flooding
    /// phase is represented only in the transmission log.
    pub unicast_path: Vec<NodeId>,
    emissions: Vec<Emission>,
}

impl MessageRoute {
    pub fn log(&self, topology: &Topology, base_tick: u64, payload_id: u64) -> TransmissionLog {
        to_log(topology, &self.emissions, base_tick, payload_id)
    }

    fn duration(&self) -> u64 {
        self.emissions.last().map_or(0, |e| e.tick + 1)
    }
}

/// Phantom routing: a walk of `cfg.hops` hops, then a flood from the phantom
/// source. A walk that passes through the destination delivers there.
pub fn route_phantom(
    topology: &Topology,
    source: NodeId,
    destination: NodeId,
    cfg: WalkConfig,
    rng: &mut SimRng,
) -> Result<MessageRoute, PhantomError> {
    let mut walk = random_walk(topology, source, destination, cfg, rng)?;
    if let Some(pos) = walk.iter().position(|n| *n == destination) {
        walk.truncate(pos + 1);
        let emissions = path_emissions(&walk, 0);
        return Ok(MessageRoute {
            delivered: true,
            transmissions: emissions.len() as u64,
            latency_hops: pos as u32,
            unicast_path: walk,
            emissions,
        });
    }
    let phantom = *walk.last().expect("walk starts at source");
    let hops = walk.len() as u64 - 1;
    let mut emissions = path_emissions(&walk, 0);
    let (flood, latency) = flood_emissions(topology, phantom, destination)?;
    emissions.extend(flood.into_iter().map(|e| Emission {
        tick: e.tick + hops,
        from: e.from,
    }));
    Ok(MessageRoute {
        delivered: latency.is_some(),
        transmissions: emissions.len() as u64,
        latency_hops: hops as u32 + latency.unwrap_or(0),
        unicast_path: walk,
        emissions,
    })
}

pub fn route_flood(topology: &Topology, source: NodeId, destination: NodeId) -> Result<MessageRoute, PhantomError> {
    let (emissions, latency) = flood_emissions(topology, source, destination)?;
    Ok(MessageRoute {
        delivered: latency.is_some(),
        transmissions: emissions.len() as u64,
        latency_hops: latency.unwrap_or(0),
        unicast_path: vec![source],
        emissions,
    })
}

/// Plain unicast along a shortest path.
pub fn route_shortest(topology: &Topology, source: NodeId, destination: NodeId) -> Result<MessageRoute, PhantomError> {
    let path = topology.shortest_path(source, destination)?;
    let emissions = path_emissions(&path, 0);
    Ok(MessageRoute {
        delivered: true,
        transmissions: emissions.len() as u64,
        latency_hops: emissions.len() as u32,
        unicast_path: path,
        emissions,
    })
}

/// Two-way routing over an established receptor. An undelivered message
/// still reports the transmissions spent by its walk.
pub fn route_two_way(
    topology: &Topology,
    source: NodeId,
    receptor: &ReceptorPath,
    rng: &mut SimRng,
    max_steps: u32,
) -> Result<MessageRoute, PhantomError> {
    topology.check(source)?;
    let index = receptor.index_map();
    let (delivered, route) = match two_way_route(topology, source, receptor, &index, rng, max_steps) {
        Ok(r) => (true, r),
        Err(r) => (false, r),
    };
    let mut emissions = path_emissions(&route, 0);
    if !delivered {
        // the last walk node also forwarded before the budget ran out
        if let Some(last) = route.last() {
            if route.len() > 1 {
                emissions.push(Emission {
                    tick: route.len() as u64 - 1,
                    from: *last,
                });
            }
        }
    }
    Ok(MessageRoute {
        delivered,
        transmissions: emissions.len() as u64,
        latency_hops: if delivered { route.len() as u32 - 1 } else { 0 },
        unicast_path: route,
        emissions,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversaryState {
    pub location: NodeId,
    pub moves_made: u32,
    /// Every overheard transmission that triggered a move: `(tick, from)`.
    pub heard_log: Vec<(u64, NodeId)>,
}

impl AdversaryState {
    pub fn at(location: NodeId) -> Self {
        AdversaryState {
            location,
            ..Default::default()
        }
    }

    /// Moves to the sender of the earliest transmission audible at the current
    /// location (lowest tick, then lowest node id). Returns whether it moved.
    fn observe(&mut self, topology: &Topology, emissions: &[Emission], base_tick: u64) -> bool {
        let heard = emissions
            .iter()
            .filter(|e| topology.are_adjacent(e.from, self.location))
            .min_by_key(|e| (e.tick, e.from));
        match heard {
            Some(e) => {
                self.heard_log.push((base_tick + e.tick, e.from));
                self.location = e.from;
                self.moves_made += 1;
                true
            }
            None => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HuntReport {
    /// Messages sent by the source before capture, or the whole budget.
    pub safety_period: u32,
    pub captured: bool,
    pub transmissions_total: u64,
    /// Hop latency of each delivered message, in send order.
    pub delivery_latency_hops: Vec<u32>,
    pub undelivered: u32,
}

impl HuntReport {
    pub fn mean_latency_hops(&self) -> f64 {
        if self.delivery_latency_hops.is_empty() {
            return 0.0;
        }
        self.delivery_latency_hops.iter().map(|x| *x as f64).sum::<f64>()
            / self.delivery_latency_hops.len() as f64
    }
}

/// Full record of a hunt: report, every transmission, adversary history.
#[derive(Clone, Debug)]
pub struct HuntTrace {
    pub report: HuntReport,
    pub log: TransmissionLog,
    pub adversary: AdversaryState,
    /// Adversary location before each move, aligned with `heard_log`.
    pub origins: Vec<NodeId>,
}

/// Runs a back-tracing hunt: the topology's first source sends
/// `message_budget` messages to the sink under `strategy` while a patient
/// adversary starting at `adversary_start` follows the first transmission it
/// overhears for each message. Capture happens when the adversary stands on
/// the source.
pub fn hunt(
    topology: &Topology,
    strategy: Strategy,
    adversary_start: NodeId,
    message_budget: u32,
    rng: &mut SimRng,
) -> Result<HuntReport, PhantomError> {
    run_hunt(topology, strategy, adversary_start, message_budget, rng, false).map(|t| t.report)
}

/// [`hunt`] with the transmission log and adversary history retained.
pub fn hunt_traced(
    topology: &Topology,
    strategy: Strategy,
    adversary_start: NodeId,
    message_budget: u32,
    rng: &mut SimRng,
) -> Result<HuntTrace, PhantomError> {
    run_hunt(topology, strategy, adversary_start, message_budget, rng, true)
}

fn run_hunt(
    topology: &Topology,
    strategy: Strategy,
    adversary_start: NodeId,
    message_budget: u32,
    rng: &mut SimRng,
    trace: bool,
) -> Result<HuntTrace, PhantomError> {
    if message_budget == 0 {
        return Err(PhantomError::InvalidParameter {
            field: "message_budget",
            reason: "must be at least 1".into(),
        });
    }
    topology.check(adversary_start)?;
    let source = *topology.sources().first().ok_or(PhantomError::NoSource)?;
    let sink = topology.sink();

    let receptor = match strategy {
        Strategy::TwoWay {
            receptor_length, ..
        } => Some(build_receptor(topology, sink, receptor_length, &mut rng.fork("receptor"))?),
        _ => None,
    };
    // flood-only routes never change, so compute once
    let fixed_flood = match strategy {
        Strategy::FloodOnly => Some(route_flood(topology, source, sink)?),
        _ => None,
    };

    let mut adversary = AdversaryState::at(adversary_start);
    let mut origins = Vec::new();
    let mut log = TransmissionLog::new();
    let mut report = HuntReport {
        safety_period: message_budget,
        captured: false,
        transmissions_total: 0,
        delivery_latency_hops: Vec::new(),
        undelivered: 0,
    };
    let mut clock = 0u64;

    for msg in 1..=message_budget {
        if adversary.location == source {
            report.captured = true;
            report.safety_period = msg;
            break;
        }
        let route = match (&strategy, &fixed_flood, &receptor) {
            (Strategy::FloodOnly, Some(r), _) => r.clone(),
            (Strategy::Phantom(cfg), _, _) => route_phantom(topology, source, sink, *cfg, rng)?,
            (Strategy::TwoWay { max_steps, .. }, _, Some(rec)) => {
                route_two_way(topology, source, rec, rng, *max_steps)?
            }
            _ => unreachable!("strategy state prepared above"),
        };
        report.transmissions_total += route.transmissions;
        if route.delivered {
            report.delivery_latency_hops.push(route.latency_hops);
        } else {
            report.undelivered += 1;
        }
        if trace {
            log.extend_from(route.log(topology, clock, msg as u64));
        }
        let before = adversary.location;
        if adversary.observe(topology, &route.emissions, clock) && trace {
            origins.push(before);
        }
        clock += route.duration() + 1;
        if adversary.location == source {
            report.captured = true;
            report.safety_period = msg;
            break;
        }
    }
    Ok(HuntTrace {
        report,
        log,
        adversary,
        origins,
    })
}

/// Exact binomial coefficient C(n, h).
pub fn binom(n: u64, h: u64) -> Result<u64, PhantomError> {
    if h > n {
        return Err(PhantomError::Domain { n, h });
    }
    let k = h.min(n - h);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step
        acc = acc
            .checked_mul((n - i) as u128)
            .ok_or(PhantomError::Overflow { n, h })?
            / (i as u128 + 1);
        if acc > u64::MAX as u128 {
            return Err(PhantomError::Overflow { n, h });
        }
    }
    Ok(acc as u64)
}

/// Analytical flooding-zone size for a target trace-back probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZonePlan {
    pub p_r: f64,
    pub hops: u64,
    pub n_min: u64,
    pub k: u64,
}

/// Smallest zone size `N ≥ H` with `C(N, H) > 1/P_r`.
pub fn min_zone_nodes(p_r: f64, hops: u64) -> Result<ZonePlan, PhantomError> {
    if !(p_r > 0.0 && p_r <= 1.0) {
        return Err(PhantomError::InvalidParameter {
            field: "p_r",
            reason: format!("must lie in (0, 1], got {p_r}"),
        });
    }
    if hops == 0 {
        return Err(PhantomError::InvalidParameter {
            field: "hops",
            reason: "must be at least 1".into(),
        });
    }
    let threshold = 1.0 / p_r;
    let mut n = hops;
    loop {
        let k = binom(n, hops)?;
        if k as f64 > threshold {
            return Ok(ZonePlan {
                p_r,
                hops,
                n_min: n,
                k,
            });
        }
        n = n.checked_add(1).ok_or(PhantomError::Overflow { n, h: hops })?;
    }
}

/// Chance of singling out the source among `C(n, h)` candidates.
pub fn traceback_probability(n: u64, h: u64) -> Result<f64, PhantomError> {
    Ok(1.0 / binom(n, h)? as f64)
}
