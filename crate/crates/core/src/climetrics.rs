//! Experiment harness: disclosure curves, aggregation timing, Monte Carlo
//! hunt campaigns and scenario files. Every table is emitted as CSV with a
//! fixed header and row order; JSON summaries carry a SHA-256 digest of each
//! CSV they describe.

use std::collections::BTreeMap;
use std::fs;
use std::hint::black_box;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::keymgmt::{generate_pool, DEFAULT_AF_BANK, DEFAULT_POOL_SIZE};
use crate::netsim::{build_grid, NodeId, SimRng};
use crate::phantom::{hunt, min_zone_nodes, HuntReport, PhantomError, Strategy, WalkConfig, ZonePlan};
use crate::pipeline::{run_layer2, run_pipeline, ClusterSpec, PipelineConfig, PipelineError};
use crate::ppda::{
    gen_shares, node_aggregate, recover_pair_sum, run_cpda, run_sppda, solve_aggregate, Field, PpdaError,
    RandomCoeffs, SeedAssignment, Share, DEFAULT_MODULUS,
};

/// Environment variable naming the output directory.
pub const OUT_DIR_ENV: &str = "CTXPRIV_OUT";
pub const DEFAULT_OUT_DIR: &str = "out";
pub const MIN_BENCH_REPS: usize = 30;
pub const WARMUP_RUNS: usize = 3;
pub const MIN_CAMPAIGN_TRIALS: usize = 100;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Ppda(#[from] PpdaError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> MetricsError {
    MetricsError::Invalid {
        field,
        reason: reason.into(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

// Disclosure model

/// Distribution of cluster sizes `m ∈ [p_c, d_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSizeDist {
    p_c: u32,
    d_max: u32,
    probs: Vec<f64>,
}

impl ClusterSizeDist {
    /// `probs[i]` is `P(k = p_c + i)`; probabilities must sum to 1.
    pub fn new(p_c: u32, d_max: u32, probs: Vec<f64>) -> Result<Self, MetricsError> {
        if p_c < 3 {
            return Err(invalid("p_c", format!("minimum cluster size is 3, got {p_c}")));
        }
        if p_c > d_max {
            return Err(invalid("d_max", format!("{d_max} is below p_c = {p_c}")));
        }
        if probs.len() != (d_max - p_c + 1) as usize {
            return Err(invalid("probs", format!("expected {} probabilities, got {}", d_max - p_c + 1, probs.len())));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("probs", "each probability must lie in [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("probs", format!("probabilities sum to {total}, not 1")));
        }
        Ok(ClusterSizeDist { p_c, d_max, probs })
    }

    /// Fixed three-member clusters.
    pub fn sppda() -> Self {
        ClusterSizeDist {
            p_c: 3,
            d_max: 3,
            probs: vec![1.0],
        }
    }

    pub fn uniform(p_c: u32, d_max: u32) -> Result<Self, MetricsError> {
        let n = d_max.saturating_sub(p_c) + 1;
        Self::new(p_c, d_max, vec![1.0 / n as f64; n as usize])
    }

    pub fn p_c(&self) -> u32 {
        self.p_c
    }

    pub fn d_max(&self) -> u32 {
        self.d_max
    }

    /// `(m, P(k = m))` pairs.
    pub fn support(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.probs.iter().enumerate().map(|(i, p)| (self.p_c + i as u32, *p))
    }

    /// Compact text form accepted by [`FromStr`].
    pub fn label(&self) -> String {
        if self.p_c == self.d_max {
            format!("fixed:{}", self.p_c)
        } else if self.probs.iter().all(|p| *p == self.probs[0]) {
            format!("uniform:{}-{}", self.p_c, self.d_max)
        } else {
            let w: Vec<String> = self.probs.iter().map(|p| p.to_string()).collect();
            format!("weights:{}:{}", self.p_c, w.join(","))
        }
    }
}

/// `fixed:M`, `uniform:A-B`, or `weights:A:p1,p2,...`.
impl FromStr for ClusterSizeDist {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || invalid("dist", format!("cannot parse `{s}`; expected fixed:M, uniform:A-B or weights:A:p1,p2,..."));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "fixed" => {
                let m: u32 = rest.trim().parse().map_err(|_| bad())?;
                Self::new(m, m, vec![1.0])
            }
            "uniform" => {
                let (a, b) = rest.split_once('-').ok_or_else(bad)?;
                Self::uniform(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)
            }
            "weights" => {
                let (a, w) = rest.split_once(':').ok_or_else(bad)?;
                let p_c: u32 = a.trim().parse().map_err(|_| bad())?;
                let probs = w
                    .split(',')
                    .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>, _>>()?;
                Self::new(p_c, p_c + probs.len() as u32 - 1, probs)
            }
            _ => Err(bad()),
        }
    }
}

/// How a cluster of size `m` discloses a value, given `m − 1` peer links
/// each broken with probability `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisclosureModel {
    /// All peer links broken: `b^(m−1)`.
    AllLinks,
    /// Any peer link broken: `1 − (1−b)^(m−1)`.
    AnyLink,
}

impl DisclosureModel {
    pub fn name(&self) -> &'static str {
        match self {
            DisclosureModel::AllLinks => "all_links",
            DisclosureModel::AnyLink => "any_link",
        }
    }
}

impl FromStr for DisclosureModel {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_links" | "all-links" | "all" => Ok(DisclosureModel::AllLinks),
            "any_link" | "any-link" | "any" => Ok(DisclosureModel::AnyLink),
            _ => Err(invalid("model", format!("unknown model `{s}`; expected all_links or any_link"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Scheme {
    Sppda,
    Cpda { dist: ClusterSizeDist, model: DisclosureModel },
}

impl Scheme {
    pub fn label(&self) -> String {
        match self {
            Scheme::Sppda => "sppda".into(),
            Scheme::Cpda { dist, model } => format!("cpda[{}|{}]", dist.label(), model.name()),
        }
    }
}

fn check_b(b: f64) -> Result<(), MetricsError> {
    if !(0.0..=1.0).contains(&b) {
        return Err(invalid("b", format!("link-break probability must lie in [0, 1], got {b}")));
    }
    Ok(())
}

/// `Σ P(k=m) · g(b, m)` with `g` from the model.
pub fn disclosure_probability(b: f64, dist: &ClusterSizeDist, model: DisclosureModel) -> Result<f64, MetricsError> {
    check_b(b)?;
    let mut acc = 0.0;
    for (m, p) in dist.support() {
        let term = match model {
            DisclosureModel::AllLinks => b.powi(m as i32 - 1),
            DisclosureModel::AnyLink => 1.0 - (1.0 - b).powi(m as i32 - 1),
        };
        acc += p * term;
    }
    Ok(acc.clamp(0.0, 1.0))
}

pub fn scheme_probability(b: f64, scheme: &Scheme) -> Result<f64, MetricsError> {
    match scheme {
        Scheme::Sppda => disclosure_probability(b, &ClusterSizeDist::sppda(), DisclosureModel::AllLinks),
        Scheme::Cpda { dist, model } => disclosure_probability(b, dist, *model),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisclosurePoint {
    pub b: f64,
    pub scheme: String,
    pub p_disclose: f64,
}

/// One row per `(b, scheme)`, `b`-major.
pub fn disclosure_curve(b_grid: &[f64], schemes: &[Scheme]) -> Result<Vec<DisclosurePoint>, MetricsError> {
    let mut rows = Vec::with_capacity(b_grid.len() * schemes.len());
    for &b in b_grid {
        for s in schemes {
            rows.push(DisclosurePoint {
                b,
                scheme: s.label(),
                p_disclose: scheme_probability(b, s)?,
            });
        }
    }
    Ok(rows)
}

pub fn disclosure_csv(rows: &[DisclosurePoint]) -> Result<String, MetricsError> {
    to_csv(rows)
}

/// Parses `start:end:step` into an inclusive grid. Points are rounded to
/// 12 decimals so that `0:1:0.05` yields exactly `0.05, 0.1, …`.
pub fn parse_b_grid(spec: &str) -> Result<Vec<f64>, MetricsError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| invalid("b_grid", format!("cannot parse `{spec}`; expected start:end:step")))?;
    let [start, end, step] = nums[..] else {
        return Err(invalid("b_grid", format!("`{spec}` must have three parts start:end:step")));
    };
    if !(step > 0.0) || end < start {
        return Err(invalid("b_grid", "need step > 0 and end ≥ start"));
    }
    check_b(start)?;
    check_b(end)?;
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

// Timing

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scheme: String,
    pub n: usize,
    pub reps: usize,
    pub median_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairsTimingRow {
    pub pairs: usize,
    pub reps: usize,
    pub median_ns: u64,
}

/// Median wall time of `f` over `reps` runs after [`WARMUP_RUNS`] untimed ones.
pub fn median_ns<T>(reps: usize, mut f: impl FnMut(usize) -> T) -> u64 {
    for i in 0..WARMUP_RUNS {
        black_box(f(i));
    }
    let mut samples: Vec<u64> = (0..reps)
        .map(|i| {
            let t = Instant::now();
            black_box(f(WARMUP_RUNS + i));
            t.elapsed().as_nanos() as u64
        })
        .collect();
    samples.sort_unstable();
    samples[samples.len() / 2]
}

fn check_reps(reps: usize) -> Result<(), MetricsError> {
    if reps < MIN_BENCH_REPS {
        return Err(invalid("reps", format!("at least {MIN_BENCH_REPS} repetitions are required, got {reps}")));
    }
    Ok(())
}

/// Per-aggregation cost of the n-party baseline for each size, then one
/// row for a three-member SPPDA cluster (key setup plus one round).
pub fn bench_aggregation(sizes: &[usize], reps: usize) -> Result<Vec<TimingRow>, MetricsError> {
    check_reps(reps)?;
    if let Some(n) = sizes.iter().find(|n| !(3..=64).contains(*n)) {
        return Err(invalid("sizes", format!("cluster size {n} outside [3, 64]")));
    }
    let field = Field::default();
    let mut rows = Vec::new();
    for &n in sizes {
        let values: Vec<_> = (0..n as u64).map(|v| field.elem(v + 1)).collect();
        let rng = SimRng::new(n as u64, "bench/cpda");
        let median = median_ns(reps, |i| run_cpda(&values, &mut rng.fork(&i.to_string())).expect("cpda run"));
        rows.push(TimingRow {
            scheme: "cpda".into(),
            n,
            reps,
            median_ns: median,
        });
    }
    rows.push(TimingRow {
        scheme: "sppda".into(),
        n: 3,
        reps,
        median_ns: bench_sppda_pairs(&[1], reps)?[0].median_ns,
    });
    Ok(rows)
}

/// Layer-2 cost for `pairs` disjoint clusters over one shared key pool.
pub fn bench_sppda_pairs(pair_counts: &[usize], reps: usize) -> Result<Vec<PairsTimingRow>, MetricsError> {
    check_reps(reps)?;
    let field = Field::default();
    let pool = generate_pool(DEFAULT_POOL_SIZE, DEFAULT_AF_BANK, &mut SimRng::new(0, "bench/pool"))
        .map_err(PipelineError::from)?;
    let mut rows = Vec::new();
    for &pairs in pair_counts {
        if pairs == 0 {
            return Err(invalid("pairs", "need at least one pair"));
        }
        let clusters: Vec<ClusterSpec> = (0..pairs as u32)
            .map(|i| ClusterSpec {
                af: NodeId(3 * i),
                s1: NodeId(3 * i + 1),
                s2: NodeId(3 * i + 2),
                z: 0,
            })
            .collect();
        let readings: BTreeMap<NodeId, u64> = clusters.iter().flat_map(|c| [(c.s1, 5), (c.s2, 7)]).collect();
        let rng = SimRng::new(pairs as u64, "bench/pairs");
        let median = median_ns(reps, |i| {
            run_layer2(&pool, &clusters, &readings, field, &mut rng.fork(&i.to_string())).expect("layer-2 run")
        });
        rows.push(PairsTimingRow {
            pairs,
            reps,
            median_ns: median,
        });
    }
    Ok(rows)
}

pub fn timing_csv(rows: &[TimingRow]) -> Result<String, MetricsError> {
    to_csv(rows)
}

pub fn pairs_csv(rows: &[PairsTimingRow]) -> Result<String, MetricsError> {
    to_csv(rows)
}

// Monte Carlo hunts

/// `flood`, `phantom:H`, `directed:H` or `twoway:L`.
pub fn parse_strategy(s: &str) -> Result<Strategy, MetricsError> {
    let bad = || invalid("strategy", format!("cannot parse `{s}`; expected flood, phantom:H, directed:H or twoway:L"));
    if s == "flood" {
        return Ok(Strategy::FloodOnly);
    }
    let (kind, n) = s.split_once(':').ok_or_else(bad)?;
    let n: u32 = n.parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(invalid("strategy", format!("`{s}` needs a positive length")));
    }
    match kind {
        "phantom" => Ok(Strategy::Phantom(WalkConfig::pure(n))),
        "directed" => Ok(Strategy::Phantom(WalkConfig::directed(n))),
        "twoway" => Ok(Strategy::two_way(n)),
        _ => Err(bad()),
    }
}

/// Inverse of [`parse_strategy`].
pub fn strategy_label(s: &Strategy) -> String {
    match s {
        Strategy::FloodOnly => "flood".into(),
        Strategy::Phantom(WalkConfig {
            mode: crate::phantom::WalkMode::Pure,
            hops,
        }) => format!("phantom:{hops}"),
        Strategy::Phantom(WalkConfig { hops, .. }) => format!("directed:{hops}"),
        Strategy::TwoWay { receptor_length, .. } => format!("twoway:{receptor_length}"),
    }
}

/// `WxH`.
pub fn parse_grid(s: &str) -> Result<(usize, usize), MetricsError> {
    let bad = || invalid("grid", format!("cannot parse `{s}`; expected WxH"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (w, h): (usize, usize) = (w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?);
    if w == 0 || h == 0 || w * h < 2 {
        return Err(invalid("grid", format!("`{s}` needs at least two nodes")));
    }
    Ok((w, h))
}

fn default_hunt_budget() -> u32 {
    2000
}

/// Grid campaign: the source sits at the corner opposite the sink (node 0)
/// and the adversary starts at the sink.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HuntCampaign {
    pub grids: Vec<(usize, usize)>,
    pub strategies: Vec<Strategy>,
    pub trials: usize,
    #[serde(default = "default_hunt_budget")]
    pub message_budget: u32,
    pub master_seed: u64,
}

impl HuntCampaign {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.trials == 0 {
            return Err(invalid("trials", "need at least one trial"));
        }
        if self.message_budget == 0 {
            return Err(invalid("message_budget", "must be at least 1"));
        }
        for &(w, h) in &self.grids {
            if w * h < 2 {
                return Err(invalid("grid", format!("{w}x{h} needs at least two nodes")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HuntRow {
    pub trial: usize,
    pub strategy: String,
    pub walk_hops: u32,
    pub grid_w: usize,
    pub grid_h: usize,
    pub safety_period: u32,
    pub captured: bool,
    pub transmissions: u64,
    pub mean_latency_hops: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HuntCell {
    pub strategy: String,
    pub grid_w: usize,
    pub grid_h: usize,
    pub trials: usize,
    pub captured: usize,
    pub undelivered: u64,
    pub safety_p25: f64,
    pub safety_median: f64,
    pub safety_p75: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub rows: Vec<HuntRow>,
    pub cells: Vec<HuntCell>,
}

impl CampaignResult {
    pub fn cell(&self, strategy: &Strategy, grid: (usize, usize)) -> Option<&HuntCell> {
        let label = strategy_label(strategy);
        self.cells
            .iter()
            .find(|c| c.strategy == label && (c.grid_w, c.grid_h) == grid)
    }
}

/// Stream of one trial; independent of thread scheduling.
pub fn hunt_trial_rng(master_seed: u64, grid: (usize, usize), strategy: &Strategy, trial: usize) -> SimRng {
    SimRng::new(
        master_seed,
        format!("hunt/{}x{}/{}/{trial}", grid.0, grid.1, strategy_label(strategy)),
    )
}

/// Runs a single trial of a campaign cell.
pub fn hunt_trial(
    grid: (usize, usize),
    strategy: Strategy,
    message_budget: u32,
    master_seed: u64,
    trial: usize,
) -> Result<HuntReport, MetricsError> {
    let (w, h) = grid;
    let topo = build_grid(w, h, 1.0)
        .and_then(|t| t.with_roles(NodeId(0), vec![NodeId::from(w * h - 1)]))
        .map_err(PhantomError::from)?;
    let mut rng = hunt_trial_rng(master_seed, grid, &strategy, trial);
    Ok(hunt(&topo, strategy, NodeId(0), message_budget, &mut rng)?)
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Runs every `(grid, strategy)` cell; trials run in parallel and rows come
/// back in `(grid, strategy, trial)` order.
pub fn montecarlo_hunt(campaign: &HuntCampaign) -> Result<CampaignResult, MetricsError> {
    campaign.validate()?;
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for &grid in &campaign.grids {
        for strategy in &campaign.strategies {
            let reports = (0..campaign.trials)
                .into_par_iter()
                .map(|t| hunt_trial(grid, *strategy, campaign.message_budget, campaign.master_seed, t))
                .collect::<Result<Vec<_>, _>>()?;
            let mut periods: Vec<f64> = reports.iter().map(|r| r.safety_period as f64).collect();
            periods.sort_by(f64::total_cmp);
            cells.push(HuntCell {
                strategy: strategy_label(strategy),
                grid_w: grid.0,
                grid_h: grid.1,
                trials: reports.len(),
                captured: reports.iter().filter(|r| r.captured).count(),
                undelivered: reports.iter().map(|r| r.undelivered as u64).sum(),
                safety_p25: quantile(&periods, 0.25),
                safety_median: quantile(&periods, 0.5),
                safety_p75: quantile(&periods, 0.75),
            });
            rows.extend(reports.into_iter().enumerate().map(|(trial, r)| HuntRow {
                trial,
                strategy: strategy_label(strategy),
                walk_hops: strategy.walk_hops(),
                grid_w: grid.0,
                grid_h: grid.1,
                safety_period: r.safety_period,
                captured: r.captured,
                transmissions: r.transmissions_total,
                mean_latency_hops: r.mean_latency_hops(),
            }));
        }
    }
    Ok(CampaignResult { rows, cells })
}

pub fn hunt_csv(rows: &[HuntRow]) -> Result<String, MetricsError> {
    to_csv(rows)
}

pub fn hunt_cells_csv(cells: &[HuntCell]) -> Result<String, MetricsError> {
    to_csv(cells)
}

// Scenarios

/// Fixed seeds and masks for reproducing a hand-checked round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedRound {
    /// Seeds of A, S1, S2.
    pub seeds: [u64; 3],
    /// `(R1, R2)` of A, S1, S2.
    pub masks: [[u64; 2]; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    PlanZone {
        p_r: f64,
        hops: u64,
        expect_n_min: Option<u64>,
    },
    Aggregate {
        x: u64,
        y: u64,
        z: u64,
        #[serde(default = "default_modulus")]
        modulus: u64,
        #[serde(default)]
        seed: u64,
        fixed: Option<FixedRound>,
        expect_pair_sum: Option<u64>,
    },
    Hunt {
        grid: String,
        strategy: String,
        #[serde(default = "default_trials")]
        trials: usize,
        #[serde(default = "default_hunt_budget")]
        message_budget: u32,
        #[serde(default)]
        seed: u64,
    },
    Disclosure {
        b_grid: String,
        #[serde(default)]
        dists: Vec<String>,
        #[serde(default = "default_models")]
        models: Vec<DisclosureModel>,
    },
    Pipeline {
        config: PipelineConfig,
        expect_hg: Option<Vec<u64>>,
    },
}

fn default_modulus() -> u64 {
    DEFAULT_MODULUS
}

fn default_trials() -> usize {
    MIN_CAMPAIGN_TRIALS
}

fn default_models() -> Vec<DisclosureModel> {
    vec![DisclosureModel::AllLinks, DisclosureModel::AnyLink]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(flatten)]
    pub kind: ScenarioKind,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(default)]
    pub scenario: Vec<Scenario>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub name: String,
    pub kind: String,
    pub passed: bool,
    pub detail: String,
    /// File name to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub outcomes: Vec<ScenarioOutcome>,
}

impl ScenarioSummary {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }
}

/// Shares and per-node sums of a round with fixed seeds and masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedRoundResult {
    pub shares: Vec<Share>,
    pub f_values: Vec<u64>,
    pub d: u64,
    pub pair_sum: u64,
}

/// Evaluates the aggregation algebra for A (holding `z`), S1 (`x`) and S2
/// (`y`) with the given seeds and masks, without the channel layer.
pub fn fixed_round(field: Field, x: u64, y: u64, z: u64, fixed: &FixedRound) -> Result<FixedRoundResult, PpdaError> {
    let parties = vec![NodeId(0), NodeId(1), NodeId(2)];
    let seeds = SeedAssignment::new(parties.clone(), fixed.seeds.iter().map(|s| field.elem(*s)).collect())?;
    let mut shares = Vec::new();
    for (i, v) in [z, x, y].into_iter().enumerate() {
        let [r1, r2] = fixed.masks[i];
        let coeffs = RandomCoeffs::quadratic(field.elem(r1), field.elem(r2));
        shares.extend(gen_shares(parties[i], field.elem(v), &seeds, &coeffs)?);
    }
    let aggregates = parties
        .iter()
        .map(|&p| {
            let mine: Vec<Share> = shares.iter().copied().filter(|s| s.evaluated_at == p).collect();
            let own = *mine.iter().find(|s| s.producer == p).expect("own share");
            let others: Vec<Share> = mine.into_iter().filter(|s| s.producer != p).collect();
            node_aggregate(own, &others)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let d = solve_aggregate(&seeds, &aggregates)?;
    Ok(FixedRoundResult {
        f_values: aggregates.iter().map(|a| a.f.value()).collect(),
        shares,
        d: d.value(),
        pair_sum: recover_pair_sum(d, field.elem(z)).value(),
    })
}

fn validate_scenario(s: &Scenario) -> Result<(), MetricsError> {
    if s.name.is_empty() || s.name.contains(['/', '\\']) || s.name.starts_with('.') {
        return Err(invalid("name", format!("`{}` is not usable as a file name", s.name)));
    }
    match &s.kind {
        ScenarioKind::PlanZone { p_r, hops, .. } => {
            if !(*p_r > 0.0 && *p_r <= 1.0) {
                return Err(invalid("p_r", format!("must lie in (0, 1], got {p_r}")));
            }
            if *hops == 0 {
                return Err(invalid("hops", "must be at least 1"));
            }
        }
        ScenarioKind::Aggregate { modulus, .. } => {
            Field::new(*modulus).map_err(|e| invalid("modulus", e.to_string()))?;
        }
        ScenarioKind::Hunt {
            grid, strategy, trials, ..
        } => {
            parse_grid(grid)?;
            parse_strategy(strategy)?;
            if *trials == 0 {
                return Err(invalid("trials", "need at least one trial"));
            }
        }
        ScenarioKind::Disclosure { b_grid, dists, .. } => {
            parse_b_grid(b_grid)?;
            for d in dists {
                d.parse::<ClusterSizeDist>()?;
            }
        }
        ScenarioKind::Pipeline { config, .. } => config.validate()?,
    }
    Ok(())
}

fn kind_name(k: &ScenarioKind) -> &'static str {
    match k {
        ScenarioKind::PlanZone { .. } => "plan_zone",
        ScenarioKind::Aggregate { .. } => "aggregate",
        ScenarioKind::Hunt { .. } => "hunt",
        ScenarioKind::Disclosure { .. } => "disclosure",
        ScenarioKind::Pipeline { .. } => "pipeline",
    }
}

/// In-memory files produced by one scenario.
type Outputs = Vec<(String, String)>;

fn execute(s: &Scenario) -> Result<(bool, String, Outputs), MetricsError> {
    let json = |v: &serde_json::Value| serde_json::to_string_pretty(v).expect("json") + "\n";
    let name = &s.name;
    match &s.kind {
        ScenarioKind::PlanZone { p_r, hops, expect_n_min } => {
            let plan: ZonePlan = min_zone_nodes(*p_r, *hops)?;
            let ok = expect_n_min.is_none_or(|n| n == plan.n_min);
            let detail = format!("n_min = {}, K = {}", plan.n_min, plan.k);
            Ok((ok, detail, vec![(format!("{name}.json"), json(&serde_json::json!({ "scenario": s, "plan": plan })))]))
        }
        ScenarioKind::Aggregate {
            x,
            y,
            z,
            modulus,
            seed,
            fixed,
            expect_pair_sum,
        } => {
            let field = Field::new(*modulus)?;
            let result = run_sppda(field.elem(*x), field.elem(*y), field.elem(*z), &mut SimRng::new(*seed, "aggregate"))?;
            let fixed_result = fixed.as_ref().map(|f| fixed_round(field, *x, *y, *z, f)).transpose()?;
            let mut ok = expect_pair_sum.is_none_or(|e| e == result.pair_sum.value());
            if let Some(f) = &fixed_result {
                ok &= f.pair_sum == result.pair_sum.value();
            }
            let detail = format!("d = {}, pair_sum = {}", result.d, result.pair_sum);
            let doc = serde_json::json!({ "scenario": s, "result": result, "fixed_round": fixed_result });
            Ok((ok, detail, vec![(format!("{name}.json"), json(&doc))]))
        }
        ScenarioKind::Hunt {
            grid,
            strategy,
            trials,
            message_budget,
            seed,
        } => {
            let campaign = HuntCampaign {
                grids: vec![parse_grid(grid)?],
                strategies: vec![parse_strategy(strategy)?],
                trials: *trials,
                message_budget: *message_budget,
                master_seed: *seed,
            };
            let r = montecarlo_hunt(&campaign)?;
            let csv = hunt_csv(&r.rows)?;
            let doc = serde_json::json!({ "scenario": s, "cells": r.cells, "csv_sha256": sha256_hex(csv.as_bytes()) });
            let detail = format!("median safety period {}", r.cells[0].safety_median);
            Ok((true, detail, vec![(format!("{name}.csv"), csv), (format!("{name}.json"), json(&doc))]))
        }
        ScenarioKind::Disclosure { b_grid, dists, models } => {
            let grid = parse_b_grid(b_grid)?;
            let mut schemes = vec![Scheme::Sppda];
            for d in dists {
                let dist: ClusterSizeDist = d.parse()?;
                schemes.extend(models.iter().map(|m| Scheme::Cpda {
                    dist: dist.clone(),
                    model: *m,
                }));
            }
            let rows = disclosure_curve(&grid, &schemes)?;
            let csv = disclosure_csv(&rows)?;
            let doc = serde_json::json!({ "scenario": s, "rows": rows.len(), "csv_sha256": sha256_hex(csv.as_bytes()) });
            Ok((true, format!("{} rows", rows.len()), vec![(format!("{name}.csv"), csv), (format!("{name}.json"), json(&doc))]))
        }
        ScenarioKind::Pipeline { config, expect_hg } => {
            let report = run_pipeline(config)?;
            let hg: Vec<u64> = report.hg_records.iter().map(|r| r.value).collect();
            let ok = expect_hg.as_ref().is_none_or(|e| *e == hg);
            Ok((ok, format!("hg records {hg:?}"), vec![(format!("{name}.json"), report.to_json())]))
        }
    }
}

/// Runs a scenario file, writing each scenario's outputs into `out_dir`.
/// All scenarios are validated before any runs; a scenario whose
/// expectation does not hold is reported with `passed = false`.
pub fn run_scenarios(path: &Path, out_dir: &Path) -> Result<ScenarioSummary, MetricsError> {
    let text = fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file = ScenarioFile::parse(&text).map_err(|e| MetricsError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    for s in &file.scenario {
        validate_scenario(s)?;
    }
    let results = file
        .scenario
        .par_iter()
        .map(|s| execute(s).map(|r| (s, r)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut summary = ScenarioSummary::default();
    for (s, (passed, detail, files)) in results {
        let mut outputs = BTreeMap::new();
        for (file, contents) in files {
            write_output(out_dir, &file, &contents)?;
            outputs.insert(file, sha256_hex(contents.as_bytes()));
        }
        summary.outcomes.push(ScenarioOutcome {
            name: s.name.clone(),
            kind: kind_name(&s.kind).into(),
            passed,
            detail,
            outputs,
        });
    }
    Ok(summary)
}

/// Writes `contents` to `dir/file`, creating `dir` as needed.
pub fn write_output(dir: &Path, file: &str, contents: &str) -> Result<PathBuf, MetricsError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| MetricsError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(file);
    fs::write(&path, contents).map_err(io(&path))?;
    Ok(path)
}
