//! Perturbation-based private aggregation.
//!
//! Each participant masks its private value `v` with a random polynomial
//! `v + R1·s + R2·s² (mod p)` and hands the evaluation at participant `i`'s
//! public seed `sᵢ` to participant `i`. Summing what it receives, participant
//! `i` holds `Fᵢ = D + (ΣR1)·sᵢ + (ΣR2)·sᵢ²` with `D` the sum of all private
//! values, so the aggregator recovers `D` from the three `Fᵢ` by solving a
//! Vandermonde system, and never sees an individual value.
//!
//! Seeds belong to participants: the aggregator A uses `a`, S1 uses `b`,
//! S2 uses `c`, and every share addressed to a participant is evaluated at
//! its own seed.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keymgmt::{
    af_to_source, establish_ss_channel, provision, source_to_af, source_to_source, AggregatorNode, KeyError,
    KeyPool, PlainFrame, SourceNode, Wire, WireMessage, WireRecord,
};
use crate::netsim::{NodeId, SimRng};

/// 2³¹ − 1.
pub const DEFAULT_MODULUS: u64 = 2_147_483_647;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PpdaError {
    #[error("modulus {0} is not a prime below 2^63")]
    NotPrime(u64),
    #[error("invalid seeds: {0}")]
    InvalidSeeds(String),
    #[error("masking polynomial of degree {degree} is not solvable with {parties} participants")]
    DegreeTooHigh { degree: usize, parties: usize },
    #[error("share for {got} mixed into the aggregate of {expected}")]
    MixedSeed { expected: NodeId, got: NodeId },
    #[error("field elements from different moduli")]
    ModulusMismatch,
    #[error("Vandermonde system is singular")]
    Singular,
    #[error("no aggregate from participant {0}")]
    MissingAggregate(NodeId),
    #[error("need at least {min} participants, got {got}")]
    TooFewParties { min: usize, got: usize },
    #[error(transparent)]
    Channel(#[from] KeyError),
    #[error("malformed protocol payload: {0}")]
    Decode(&'static str),
}

/// Deterministic Miller-Rabin for 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &p in &BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut r = 0;
    while d % 2 == 0 {
        d /= 2;
        r += 1;
    }
    let mul = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let pow = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mul(acc, b);
            }
            b = mul(b, b);
            e >>= 1;
        }
        acc
    };
    'witness: for &a in &BASES {
        let mut x = pow(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = mul(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// A prime field `Z/pZ`, `p < 2⁶³`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    p: u64,
}

impl Default for Field {
    fn default() -> Self {
        Field { p: DEFAULT_MODULUS }
    }
}

impl Field {
    pub fn new(p: u64) -> Result<Self, PpdaError> {
        if p >= 1 << 63 || !is_prime(p) {
            return Err(PpdaError::NotPrime(p));
        }
        Ok(Field { p })
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }

    pub fn elem(&self, v: u64) -> FieldElem {
        FieldElem {
            value: v % self.p,
            modulus: self.p,
        }
    }

    /// Reduces a signed integer into the field.
    pub fn from_i64(&self, v: i64) -> FieldElem {
        self.elem(v.rem_euclid(self.p as i64) as u64)
    }

    pub fn zero(&self) -> FieldElem {
        self.elem(0)
    }

    pub fn one(&self) -> FieldElem {
        self.elem(1)
    }

    pub fn random(&self, rng: &mut SimRng) -> FieldElem {
        self.elem(rng.random_range(0..self.p))
    }

    pub fn random_nonzero(&self, rng: &mut SimRng) -> FieldElem {
        self.elem(rng.random_range(1..self.p))
    }
}

/// Element of a prime field; arithmetic panics if moduli differ.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FieldElem {
    value: u64,
    modulus: u64,
}

impl fmt::Debug for FieldElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl fmt::Display for FieldElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl FieldElem {
    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn field(&self) -> Field {
        Field { p: self.modulus }
    }

    pub fn is_zero(&self) -> bool {
        self.value == 0
    }

    pub fn pow(self, mut e: u64) -> FieldElem {
        let mut base = self;
        let mut acc = self.field().one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse by Fermat's little theorem; `None` for zero.
    pub fn inv(self) -> Option<FieldElem> {
        (!self.is_zero()).then(|| self.pow(self.modulus - 2))
    }

    fn same_field(&self, other: &FieldElem) {
        assert_eq!(self.modulus, other.modulus, "field elements from different moduli");
    }
}

impl Add for FieldElem {
    type Output = FieldElem;
    fn add(self, rhs: FieldElem) -> FieldElem {
        self.same_field(&rhs);
        let s = self.value + rhs.value;
        FieldElem {
            value: if s >= self.modulus { s - self.modulus } else { s },
            modulus: self.modulus,
        }
    }
}

impl AddAssign for FieldElem {
    fn add_assign(&mut self, rhs: FieldElem) {
        *self = *self + rhs;
    }
}

impl Sub for FieldElem {
    type Output = FieldElem;
    fn sub(self, rhs: FieldElem) -> FieldElem {
        self + (-rhs)
    }
}

impl Neg for FieldElem {
    type Output = FieldElem;
    fn neg(self) -> FieldElem {
        FieldElem {
            value: if self.value == 0 { 0 } else { self.modulus - self.value },
            modulus: self.modulus,
        }
    }
}

impl Mul for FieldElem {
    type Output = FieldElem;
    fn mul(self, rhs: FieldElem) -> FieldElem {
        self.same_field(&rhs);
        FieldElem {
            value: ((self.value as u128 * rhs.value as u128) % self.modulus as u128) as u64,
            modulus: self.modulus,
        }
    }
}

/// Public evaluation points, one per participant, in participant order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedAssignment {
    parties: Vec<NodeId>,
    seeds: Vec<FieldElem>,
}

impl SeedAssignment {
    /// Seeds must be nonzero, pairwise distinct and share one modulus.
    pub fn new(parties: Vec<NodeId>, seeds: Vec<FieldElem>) -> Result<Self, PpdaError> {
        if parties.len() != seeds.len() {
            return Err(PpdaError::InvalidSeeds(format!(
                "{} participants but {} seeds",
                parties.len(),
                seeds.len()
            )));
        }
        if seeds.is_empty() {
            return Err(PpdaError::InvalidSeeds("no participants".into()));
        }
        let modulus = seeds[0].modulus;
        for (i, s) in seeds.iter().enumerate() {
            if s.modulus != modulus {
                return Err(PpdaError::ModulusMismatch);
            }
            if s.is_zero() {
                return Err(PpdaError::InvalidSeeds(format!("seed of {} is zero", parties[i])));
            }
            if seeds[..i].contains(s) {
                return Err(PpdaError::InvalidSeeds(format!("seed {s} repeated")));
            }
            if parties[..i].contains(&parties[i]) {
                return Err(PpdaError::InvalidSeeds(format!("participant {} listed twice", parties[i])));
            }
        }
        Ok(SeedAssignment { parties, seeds })
    }

    /// Draws distinct nonzero seeds uniformly from `[1, p)`, redrawing collisions.
    pub fn draw(field: Field, parties: Vec<NodeId>, rng: &mut SimRng) -> Result<Self, PpdaError> {
        if (parties.len() as u64) >= field.modulus() {
            return Err(PpdaError::InvalidSeeds(format!(
                "{} participants need more than {} nonzero field elements",
                parties.len(),
                field.modulus() - 1
            )));
        }
        let mut seeds: Vec<FieldElem> = Vec::with_capacity(parties.len());
        while seeds.len() < parties.len() {
            let s = field.random_nonzero(rng);
            if !seeds.contains(&s) {
                seeds.push(s);
            }
        }
        SeedAssignment::new(parties, seeds)
    }

    pub fn len(&self) -> usize {
        self.parties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parties.is_empty()
    }

    pub fn parties(&self) -> &[NodeId] {
        &self.parties
    }

    pub fn seeds(&self) -> &[FieldElem] {
        &self.seeds
    }

    pub fn seed_of(&self, party: NodeId) -> Option<FieldElem> {
        self.parties.iter().position(|p| *p == party).map(|i| self.seeds[i])
    }

    pub fn field(&self) -> Field {
        self.seeds[0].field()
    }

    /// Reorders participants (and their seeds) by `order`.
    pub fn permuted(&self, order: &[usize]) -> SeedAssignment {
        SeedAssignment {
            parties: order.iter().map(|&i| self.parties[i]).collect(),
            seeds: order.iter().map(|&i| self.seeds[i]).collect(),
        }
    }
}

/// Masking-polynomial coefficients `R1, R2, …` (constant term excluded).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomCoeffs {
    pub coeffs: Vec<FieldElem>,
}

impl RandomCoeffs {
    pub fn quadratic(r1: FieldElem, r2: FieldElem) -> Self {
        RandomCoeffs { coeffs: vec![r1, r2] }
    }

    pub fn random(field: Field, degree: usize, rng: &mut SimRng) -> Self {
        RandomCoeffs {
            coeffs: (0..degree).map(|_| field.random(rng)).collect(),
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }

    /// `value + Σ Rₖ·sᵏ` by Horner's rule.
    pub fn mask(&self, value: FieldElem, s: FieldElem) -> FieldElem {
        let mut acc = s.field().zero();
        for c in self.coeffs.iter().rev() {
            acc = (acc + *c) * s;
        }
        acc + value
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Share {
    pub producer: NodeId,
    pub evaluated_at: NodeId,
    pub value: FieldElem,
}

impl Share {
    fn to_bytes(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16);
        out.extend_from_slice(&self.producer.0.to_be_bytes());
        out.extend_from_slice(&self.evaluated_at.0.to_be_bytes());
        out.extend_from_slice(&self.value.value.to_be_bytes());
        out
    }

    fn from_bytes(field: Field, b: &[u8]) -> Result<Share, PpdaError> {
        if b.len() != 16 {
            return Err(PpdaError::Decode("share payload must be 16 bytes"));
        }
        let value = u64::from_be_bytes(b[8..].try_into().unwrap());
        if value >= field.modulus() {
            return Err(PpdaError::Decode("share value outside the field"));
        }
        Ok(Share {
            producer: NodeId(u32::from_be_bytes(b[..4].try_into().unwrap())),
            evaluated_at: NodeId(u32::from_be_bytes(b[4..8].try_into().unwrap())),
            value: field.elem(value),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeAggregate {
    pub party: NodeId,
    pub f: FieldElem,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationResult {
    /// Sum of every participant's private value (`x + y + z`).
    pub d: FieldElem,
    /// `D − z`: the sources' sum.
    pub pair_sum: FieldElem,
}

/// Evaluates `producer`'s masked value at every participant's seed.
pub fn gen_shares(
    producer: NodeId,
    private_value: FieldElem,
    seeds: &SeedAssignment,
    coeffs: &RandomCoeffs,
) -> Result<Vec<Share>, PpdaError> {
    if coeffs.degree() + 1 > seeds.len() {
        return Err(PpdaError::DegreeTooHigh {
            degree: coeffs.degree(),
            parties: seeds.len(),
        });
    }
    if private_value.modulus != seeds.field().modulus() || coeffs.coeffs.iter().any(|c| c.modulus != private_value.modulus) {
        return Err(PpdaError::ModulusMismatch);
    }
    Ok(seeds
        .parties
        .iter()
        .zip(&seeds.seeds)
        .map(|(&party, &s)| Share {
            producer,
            evaluated_at: party,
            value: coeffs.mask(private_value, s),
        })
        .collect())
}

/// Sums a participant's own share with the shares it received; all must be
/// evaluated at that participant's seed.
pub fn node_aggregate(own_share: Share, received: &[Share]) -> Result<NodeAggregate, PpdaError> {
    let party = own_share.evaluated_at;
    let mut f = own_share.value;
    for s in received {
        if s.evaluated_at != party {
            return Err(PpdaError::MixedSeed {
                expected: party,
                got: s.evaluated_at,
            });
        }
        if s.value.modulus != f.modulus {
            return Err(PpdaError::ModulusMismatch);
        }
        f += s.value;
    }
    Ok(NodeAggregate { party, f })
}

/// Solves the square system `M·x = rhs` over the field by Gauss-Jordan
/// elimination.
fn solve_linear(mut m: Vec<Vec<FieldElem>>, mut rhs: Vec<FieldElem>) -> Result<Vec<FieldElem>, PpdaError> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !m[r][col].is_zero()).ok_or(PpdaError::Singular)?;
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        let inv = m[col][col].inv().expect("pivot is nonzero");
        for c in col..n {
            m[col][c] = m[col][c] * inv;
        }
        rhs[col] = rhs[col] * inv;
        for r in 0..n {
            if r != col && !m[r][col].is_zero() {
                let factor = m[r][col];
                for c in col..n {
                    let t = m[col][c];
                    m[r][c] = m[r][c] - factor * t;
                }
                let t = rhs[col];
                rhs[r] = rhs[r] - factor * t;
            }
        }
    }
    Ok(rhs)
}

/// Recovers `D` from the participants' sums: row `i` of the Vandermonde
/// system is `[1, sᵢ, sᵢ², …] · (D, ΣR1, ΣR2, …) = Fᵢ`.
pub fn solve_aggregate(seeds: &SeedAssignment, f_values: &[NodeAggregate]) -> Result<FieldElem, PpdaError> {
    let n = seeds.len();
    let field = seeds.field();
    let mut rhs = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for (&party, &s) in seeds.parties.iter().zip(&seeds.seeds) {
        let agg = f_values
            .iter()
            .find(|a| a.party == party)
            .ok_or(PpdaError::MissingAggregate(party))?;
        if agg.f.modulus != field.modulus() {
            return Err(PpdaError::ModulusMismatch);
        }
        rhs.push(agg.f);
        let mut row = Vec::with_capacity(n);
        let mut pw = field.one();
        for _ in 0..n {
            row.push(pw);
            pw = pw * s;
        }
        rows.push(row);
    }
    if f_values.len() != n {
        return Err(PpdaError::InvalidSeeds(format!("{} aggregates for {n} participants", f_values.len())));
    }
    Ok(solve_linear(rows, rhs)?[0])
}

/// The aggregator removes its own value from `D`.
pub fn recover_pair_sum(d: FieldElem, z: FieldElem) -> FieldElem {
    d - z
}

/// Private material of one round, for verification in tests and audits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundAudit {
    pub values: BTreeMap<NodeId, FieldElem>,
    pub coeffs: BTreeMap<NodeId, RandomCoeffs>,
    pub shares: Vec<Share>,
}

/// Public record of one aggregation round: everything that crossed the wire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTranscript {
    pub modulus: u64,
    pub aggregator: NodeId,
    pub sources: [NodeId; 2],
    pub seeds: SeedAssignment,
    pub frames: Vec<WireRecord>,
    pub f_values: Vec<NodeAggregate>,
    pub result: AggregationResult,
}

impl RoundTranscript {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Clone, Debug)]
pub struct SppdaRound {
    pub result: AggregationResult,
    pub transcript: RoundTranscript,
    pub audit: RoundAudit,
}

/// Two sources and their aggregator-forwarder with keys provisioned and the
/// source↔source channel established.
#[derive(Clone, Debug)]
pub struct SppdaCluster {
    pub af: AggregatorNode,
    pub s1: SourceNode,
    pub s2: SourceNode,
}

fn decode_values(msg: &[u8]) -> Result<Vec<u64>, PpdaError> {
    if msg.len() % 8 != 0 {
        return Err(PpdaError::Decode("payload is not a list of u64"));
    }
    Ok(msg.chunks(8).map(|c| u64::from_be_bytes(c.try_into().unwrap())).collect())
}

impl SppdaCluster {
    pub fn setup(
        pool: &KeyPool,
        af: NodeId,
        s1: NodeId,
        s2: NodeId,
        wire: &mut Wire,
        rng: &mut SimRng,
    ) -> Result<Self, PpdaError> {
        if af == s1 || af == s2 || s1 == s2 {
            return Err(PpdaError::InvalidSeeds("cluster members must be distinct".into()));
        }
        let (mut agg, mut srcs) = provision(pool, af, &[s1, s2], rng);
        let mut n2 = srcs.pop().expect("two sources");
        let mut n1 = srcs.pop().expect("two sources");
        establish_ss_channel(&mut n1, &mut n2, &mut agg, wire, rng)?;
        Ok(SppdaCluster { af: agg, s1: n1, s2: n2 })
    }

    /// Runs one aggregation of `x` (at S1), `y` (at S2) and `z` (at the AF).
    pub fn run_round(
        &mut self,
        field: Field,
        x: FieldElem,
        y: FieldElem,
        z: FieldElem,
        wire: &mut Wire,
        rng: &mut SimRng,
    ) -> Result<SppdaRound, PpdaError> {
        let (a, s1, s2) = (self.af.id, self.s1.id, self.s2.id);
        let first_record = wire.records().len();

        // A picks and publishes the seeds
        let seeds = SeedAssignment::draw(field, vec![a, s1, s2], rng)?;
        let seed_values: Vec<u64> = seeds.seeds().iter().map(|s| s.value()).collect();
        for to in [s1, s2] {
            let frame = WireMessage::Plain(PlainFrame {
                sender: a,
                receiver: to,
                values: seed_values.clone(),
            });
            match wire.send(a, to, frame) {
                Some(WireMessage::Plain(p)) if p.values == seed_values => {}
                Some(_) => return Err(KeyError::Protocol("seed broadcast altered".into()).into()),
                None => return Err(KeyError::MissingMessage { from: a, to }.into()),
            }
        }

        let mut audit = RoundAudit {
            values: BTreeMap::new(),
            coeffs: BTreeMap::new(),
            shares: Vec::new(),
        };
        let mut shares_of = BTreeMap::new();
        for (party, v) in [(a, z), (s1, x), (s2, y)] {
            let coeffs = RandomCoeffs::random(field, 2, rng);
            let shares = gen_shares(party, v, &seeds, &coeffs)?;
            audit.values.insert(party, v);
            audit.coeffs.insert(party, coeffs);
            audit.shares.extend_from_slice(&shares);
            shares_of.insert(party, shares);
        }
        let share = |producer: NodeId, at: NodeId| {
            *shares_of[&producer]
                .iter()
                .find(|s| s.evaluated_at == at)
                .expect("one share per participant")
        };

        let check = |got: Share, want_producer: NodeId, me: NodeId| -> Result<Share, PpdaError> {
            if got.producer != want_producer || got.evaluated_at != me {
                return Err(KeyError::Protocol("share routed to the wrong participant".into()).into());
            }
            Ok(got)
        };

        // A → S1, A → S2
        let m = af_to_source(&self.af, &self.s1, wire, &share(a, s1).to_bytes(), rng)?;
        let a_to_s1 = check(Share::from_bytes(field, &m)?, a, s1)?;
        let m = af_to_source(&self.af, &self.s2, wire, &share(a, s2).to_bytes(), rng)?;
        let a_to_s2 = check(Share::from_bytes(field, &m)?, a, s2)?;
        // S1 → A, S1 → S2 (relayed)
        let m = source_to_af(&self.s1, &self.af, wire, &share(s1, a).to_bytes(), rng)?;
        let s1_to_a = check(Share::from_bytes(field, &m)?, s1, a)?;
        let m = source_to_source(&self.s1, &self.s2, &mut self.af, wire, &share(s1, s2).to_bytes(), rng)?;
        let s1_to_s2 = check(Share::from_bytes(field, &m)?, s1, s2)?;
        // S2 → A, S2 → S1 (relayed)
        let m = source_to_af(&self.s2, &self.af, wire, &share(s2, a).to_bytes(), rng)?;
        let s2_to_a = check(Share::from_bytes(field, &m)?, s2, a)?;
        let m = source_to_source(&self.s2, &self.s1, &mut self.af, wire, &share(s2, s1).to_bytes(), rng)?;
        let s2_to_s1 = check(Share::from_bytes(field, &m)?, s2, s1)?;

        let f_s1 = node_aggregate(share(s1, s1), &[a_to_s1, s2_to_s1])?;
        let f_s2 = node_aggregate(share(s2, s2), &[a_to_s2, s1_to_s2])?;
        let f_a = node_aggregate(share(a, a), &[s1_to_a, s2_to_a])?;

        let mut at_a = Vec::new();
        for (src, f) in [(&self.s1, f_s1), (&self.s2, f_s2)] {
            let m = source_to_af(src, &self.af, wire, &f.f.value().to_be_bytes(), rng)?;
            let v = decode_values(&m)?;
            if v.len() != 1 || v[0] >= field.modulus() {
                return Err(PpdaError::Decode("aggregate payload"));
            }
            at_a.push(NodeAggregate {
                party: src.id,
                f: field.elem(v[0]),
            });
        }
        at_a.insert(0, f_a);

        let d = solve_aggregate(&seeds, &at_a)?;
        let result = AggregationResult {
            d,
            pair_sum: recover_pair_sum(d, z),
        };
        let transcript = RoundTranscript {
            modulus: field.modulus(),
            aggregator: a,
            sources: [s1, s2],
            seeds,
            frames: wire.records()[first_record..].to_vec(),
            f_values: at_a,
            result,
        };
        Ok(SppdaRound {
            result,
            transcript,
            audit,
        })
    }
}

/// Node ids used by the standalone protocol runs.
pub const STANDALONE_AF: NodeId = NodeId(0);
pub const STANDALONE_S1: NodeId = NodeId(1);
pub const STANDALONE_S2: NodeId = NodeId(2);

/// One complete SPPDA round between fresh nodes: key predistribution,
/// source↔source channel setup, share exchange, and the aggregator's solve.
pub fn run_sppda(x: FieldElem, y: FieldElem, z: FieldElem, rng: &mut SimRng) -> Result<AggregationResult, PpdaError> {
    run_sppda_traced(x, y, z, rng, &mut Wire::new()).map(|r| r.result)
}

/// [`run_sppda`] over a caller-supplied wire, returning the full round.
pub fn run_sppda_traced(
    x: FieldElem,
    y: FieldElem,
    z: FieldElem,
    rng: &mut SimRng,
    wire: &mut Wire,
) -> Result<SppdaRound, PpdaError> {
    let field = x.field();
    if y.modulus != field.modulus() || z.modulus != field.modulus() {
        return Err(PpdaError::ModulusMismatch);
    }
    let pool = crate::keymgmt::generate_pool(
        crate::keymgmt::DEFAULT_POOL_SIZE,
        crate::keymgmt::DEFAULT_AF_BANK,
        &mut rng.fork("pool"),
    )?;
    let mut cluster = SppdaCluster::setup(&pool, STANDALONE_AF, STANDALONE_S1, STANDALONE_S2, wire, rng)?;
    cluster.run_round(field, x, y, z, wire, rng)
}

/// n-party baseline: every participant masks its value with a random
/// polynomial of degree n−1, evaluates it at every seed, and the per-node
/// sums are solved as an n×n Vandermonde system.
pub fn run_cpda(values: &[FieldElem], rng: &mut SimRng) -> Result<FieldElem, PpdaError> {
    if values.len() < 3 {
        return Err(PpdaError::TooFewParties {
            min: 3,
            got: values.len(),
        });
    }
    let field = values[0].field();
    let parties: Vec<NodeId> = (0..values.len()).map(NodeId::from).collect();
    let seeds = SeedAssignment::draw(field, parties.clone(), rng)?;
    run_cpda_with_seeds(values, &seeds, rng)
}

/// [`run_cpda`] with fixed seeds.
pub fn run_cpda_with_seeds(values: &[FieldElem], seeds: &SeedAssignment, rng: &mut SimRng) -> Result<FieldElem, PpdaError> {
    let n = values.len();
    if seeds.len() != n {
        return Err(PpdaError::InvalidSeeds(format!("{} seeds for {n} participants", seeds.len())));
    }
    let field = seeds.field();
    // inbox[i] collects the shares evaluated at participant i's seed
    let mut inbox: Vec<Vec<Share>> = vec![Vec::with_capacity(n); n];
    for (i, &v) in values.iter().enumerate() {
        let coeffs = RandomCoeffs::random(field, n - 1, rng);
        for (j, share) in gen_shares(seeds.parties[i], v, seeds, &coeffs)?.into_iter().enumerate() {
            inbox[j].push(share);
        }
    }
    let aggregates = inbox
        .into_iter()
        .enumerate()
        .map(|(j, shares)| {
            let own = *shares.iter().find(|s| s.producer == seeds.parties[j]).expect("own share");
            let others: Vec<Share> = shares.into_iter().filter(|s| s.producer != seeds.parties[j]).collect();
            node_aggregate(own, &others)
        })
        .collect::<Result<Vec<_>, _>>()?;
    solve_aggregate(seeds, &aggregates)
}
