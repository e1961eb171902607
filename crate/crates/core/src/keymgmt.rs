//! Key predistribution for aggregation clusters.
//!
//! A pool of `K` keys is split into two banks. Every source holds the whole
//! source↔AF bank, but each source/AF pair sees it through its own random
//! permutation, and a session key is picked by announcing a 1-based index
//! `R_c` in the clear. The source↔source bank is held only by sources; two
//! sources exchange their permutations of it through the AF, wrapped in an
//! inner layer the AF cannot open.
//!
//! Wire layout (all integers big-endian), each message prefixed by a one-byte
//! type tag:
//!
//! | tag  | message      | body                                                            |
//! |------|--------------|-----------------------------------------------------------------|
//! | 0x01 | announcement | sender `u32`, R_c `u32`                                         |
//! | 0x02 | sealed frame | sender `u32`, receiver `u32`, nonce `[u8; 12]`, len `u32`, ciphertext, tag `[u8; 16]` |
//! | 0x03 | plain frame  | sender `u32`, receiver `u32`, count `u32`, values `u64 × count` |
//!
//! The inner envelope carried inside AF-relayed frames is: mode `u8`
//! (0 = bootstrap index into the unpermuted bank, 1 = index into the
//! receiver's schedule), index `u32` (1-based), nonce `[u8; 12]`, then
//! ciphertext‖tag.
//!
//! [`SimCipher`] is a simulation primitive, not production cryptography.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::netsim::{NodeId, SimRng};

pub const KEY_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const DEFAULT_POOL_SIZE: usize = 256;
pub const DEFAULT_AF_BANK: usize = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeyError {
    #[error("invalid key split: pool of {total} with {af_bank} source-AF keys (need 1 <= k_af < K)")]
    InvalidSplit { total: usize, af_bank: usize },
    #[error("no pair permutation registered for source {0}")]
    UnknownSource(NodeId),
    #[error("key index R_c = {r_c} outside 1..={bank_size}")]
    IndexOutOfRange { r_c: u32, bank_size: usize },
    #[error("authentication failed at {at}")]
    Authentication { at: NodeId },
    #[error("message from {from} to {to} never arrived")]
    MissingMessage { from: NodeId, to: NodeId },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("malformed wire bytes: {0}")]
    Malformed(&'static str),
}

/// Symmetric key material.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Key(pub [u8; KEY_LEN]);

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Key({:02x}{:02x}..)", self.0[0], self.0[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolKey {
    pub id: KeyId,
    pub key: Key,
}

/// An ordered list of pool keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyBank {
    keys: Vec<PoolKey>,
}

impl KeyBank {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&PoolKey> {
        self.keys.get(index)
    }

    pub fn ids(&self) -> impl Iterator<Item = KeyId> + '_ {
        self.keys.iter().map(|k| k.id)
    }

    pub fn keys(&self) -> &[PoolKey] {
        &self.keys
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPool {
    pub bank_af: KeyBank,
    pub bank_ss: KeyBank,
}

impl KeyPool {
    pub fn total(&self) -> usize {
        self.bank_af.len() + self.bank_ss.len()
    }
}

/// Generates `total` distinct keys with sequential ids; the first `af_bank`
/// form the source↔AF bank, the rest the source↔source bank.
pub fn generate_pool(total: usize, af_bank: usize, rng: &mut SimRng) -> Result<KeyPool, KeyError> {
    if af_bank == 0 || af_bank >= total {
        return Err(KeyError::InvalidSplit { total, af_bank });
    }
    let mut seen = HashSet::with_capacity(total);
    let mut keys = Vec::with_capacity(total);
    while keys.len() < total {
        let mut k = [0u8; KEY_LEN];
        rng.fill_bytes(&mut k);
        if seen.insert(k) {
            keys.push(PoolKey {
                id: KeyId(keys.len() as u32),
                key: Key(k),
            });
        }
    }
    let bank_ss = keys.split_off(af_bank);
    Ok(KeyPool {
        bank_af: KeyBank { keys },
        bank_ss: KeyBank { keys: bank_ss },
    })
}

/// A per-pair reordering of a bank, stored at both ends of the pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPermutation {
    pub owner: NodeId,
    pub peer: NodeId,
    order: Vec<u32>,
}

impl PairPermutation {
    pub fn identity(owner: NodeId, peer: NodeId, size: usize) -> Self {
        PairPermutation {
            owner,
            peer,
            order: (0..size as u32).collect(),
        }
    }

    /// Validates that `order` is a bijection on `[0, order.len())`.
    pub fn from_order(owner: NodeId, peer: NodeId, order: Vec<u32>) -> Result<Self, KeyError> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            match seen.get_mut(i as usize) {
                Some(s) if !*s => *s = true,
                _ => return Err(KeyError::Protocol("permutation is not a bijection".into())),
            }
        }
        Ok(PairPermutation { owner, peer, order })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Bank index reached from permuted position `i` (0-based).
    pub fn apply(&self, i: usize) -> usize {
        self.order[i] as usize
    }

    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn inverse(&self) -> PairPermutation {
        let mut inv = vec![0u32; self.order.len()];
        for (i, &j) in self.order.iter().enumerate() {
            inv[j as usize] = i as u32;
        }
        PairPermutation {
            owner: self.owner,
            peer: self.peer,
            order: inv,
        }
    }

    /// `self` after `other`: position `i` maps to `self.apply(other.apply(i))`.
    pub fn compose(&self, other: &PairPermutation) -> PairPermutation {
        PairPermutation {
            owner: self.owner,
            peer: self.peer,
            order: other.order.iter().map(|&j| self.order[j as usize]).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(i, &j)| i as u32 == j)
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.order.len());
        out.extend_from_slice(&(self.order.len() as u32).to_be_bytes());
        for i in &self.order {
            out.extend_from_slice(&i.to_be_bytes());
        }
        out
    }

    fn from_bytes(owner: NodeId, peer: NodeId, bytes: &[u8]) -> Result<Self, KeyError> {
        let mut r = Reader::new(bytes);
        let n = r.u32()? as usize;
        let order = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        PairPermutation::from_order(owner, peer, order)
    }
}

/// Uniform random reordering of `bank` for the pair `(owner, peer)`.
pub fn permute_bank_for_pair(bank: &KeyBank, owner: NodeId, peer: NodeId, rng: &mut SimRng) -> PairPermutation {
    let mut order: Vec<u32> = (0..bank.len() as u32).collect();
    order.shuffle(rng);
    PairPermutation { owner, peer, order }
}

/// Plaintext announcement of the session-key index, 1-based on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyIndexAnnouncement {
    pub sender: NodeId,
    pub r_c: u32,
}

/// Authenticated symmetric encryption used for every sealed frame.
pub trait CipherSuite {
    /// Returns ciphertext followed by a [`TAG_LEN`]-byte tag.
    fn seal(&self, key: &Key, nonce: &[u8; NONCE_LEN], plaintext: &[u8], ad: &[u8]) -> Vec<u8>;
    fn open(&self, key: &Key, nonce: &[u8; NONCE_LEN], sealed: &[u8], ad: &[u8]) -> Option<Vec<u8>>;
}

/// SHA-256 counter-mode keystream with an HMAC-SHA-256 tag truncated to 16
/// bytes. Adequate for simulation only.
#[derive(Clone, Copy, Debug, Default)]
pub struct SimCipher;

impl SimCipher {
    fn keystream_xor(key: &Key, nonce: &[u8; NONCE_LEN], data: &mut [u8]) {
        for (block, chunk) in data.chunks_mut(32).enumerate() {
            let mut h = Sha256::new();
            h.update(b"ctxpriv-ks");
            h.update(key.0);
            h.update(nonce);
            h.update((block as u64).to_be_bytes());
            let pad = h.finalize();
            for (b, p) in chunk.iter_mut().zip(pad.iter()) {
                *b ^= p;
            }
        }
    }

    fn mac(key: &Key, nonce: &[u8; NONCE_LEN], ct: &[u8], ad: &[u8]) -> Hmac<Sha256> {
        let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(&key.0).expect("HMAC accepts any key length");
        mac.update(b"ctxpriv-tag");
        mac.update(nonce);
        mac.update(&(ad.len() as u64).to_be_bytes());
        mac.update(ad);
        mac.update(ct);
        mac
    }
}

impl CipherSuite for SimCipher {
    fn seal(&self, key: &Key, nonce: &[u8; NONCE_LEN], plaintext: &[u8], ad: &[u8]) -> Vec<u8> {
        let mut out = plaintext.to_vec();
        Self::keystream_xor(key, nonce, &mut out);
        let tag = Self::mac(key, nonce, &out, ad).finalize().into_bytes();
        out.extend_from_slice(&tag[..TAG_LEN]);
        out
    }

    fn open(&self, key: &Key, nonce: &[u8; NONCE_LEN], sealed: &[u8], ad: &[u8]) -> Option<Vec<u8>> {
        if sealed.len() < TAG_LEN {
            return None;
        }
        let (ct, tag) = sealed.split_at(sealed.len() - TAG_LEN);
        Self::mac(key, nonce, ct, ad).verify_truncated_left(tag).ok()?;
        let mut pt = ct.to_vec();
        Self::keystream_xor(key, nonce, &mut pt);
        Some(pt)
    }
}

/// [`SimCipher::seal`] with the default suite.
pub fn seal(key: &Key, nonce: &[u8; NONCE_LEN], plaintext: &[u8], ad: &[u8]) -> Vec<u8> {
    SimCipher.seal(key, nonce, plaintext, ad)
}

/// [`SimCipher::open`] with the default suite; `None` on authentication failure.
pub fn open(key: &Key, nonce: &[u8; NONCE_LEN], sealed: &[u8], ad: &[u8]) -> Option<Vec<u8>> {
    SimCipher.open(key, nonce, sealed, ad)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedFrame {
    pub sender: NodeId,
    pub receiver: NodeId,
    #[serde(with = "hex")]
    pub nonce: Vec<u8>,
    #[serde(with = "hex")]
    pub ciphertext: Vec<u8>,
    #[serde(with = "hex")]
    pub tag: Vec<u8>,
}

impl SealedFrame {
    fn header_ad(sender: NodeId, receiver: NodeId) -> [u8; 8] {
        let mut ad = [0u8; 8];
        ad[..4].copy_from_slice(&sender.0.to_be_bytes());
        ad[4..].copy_from_slice(&receiver.0.to_be_bytes());
        ad
    }

    pub fn seal(
        suite: &dyn CipherSuite,
        key: &Key,
        sender: NodeId,
        receiver: NodeId,
        plaintext: &[u8],
        rng: &mut SimRng,
    ) -> Self {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let mut sealed = suite.seal(key, &nonce, plaintext, &Self::header_ad(sender, receiver));
        let tag = sealed.split_off(sealed.len() - TAG_LEN);
        SealedFrame {
            sender,
            receiver,
            nonce: nonce.to_vec(),
            ciphertext: sealed,
            tag,
        }
    }

    pub fn open(&self, suite: &dyn CipherSuite, key: &Key) -> Option<Vec<u8>> {
        let nonce: [u8; NONCE_LEN] = self.nonce.as_slice().try_into().ok()?;
        let mut sealed = self.ciphertext.clone();
        sealed.extend_from_slice(&self.tag);
        suite.open(key, &nonce, &sealed, &Self::header_ad(self.sender, self.receiver))
    }
}

/// Unprotected frame carrying public numeric values (seeds, forwarded aggregates).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlainFrame {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub values: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Announce(KeyIndexAnnouncement),
    Sealed(SealedFrame),
    Plain(PlainFrame),
}

impl WireMessage {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            WireMessage::Announce(a) => {
                out.push(0x01);
                out.extend_from_slice(&a.sender.0.to_be_bytes());
                out.extend_from_slice(&a.r_c.to_be_bytes());
            }
            WireMessage::Sealed(f) => {
                out.push(0x02);
                out.extend_from_slice(&f.sender.0.to_be_bytes());
                out.extend_from_slice(&f.receiver.0.to_be_bytes());
                out.extend_from_slice(&f.nonce);
                out.extend_from_slice(&(f.ciphertext.len() as u32).to_be_bytes());
                out.extend_from_slice(&f.ciphertext);
                out.extend_from_slice(&f.tag);
            }
            WireMessage::Plain(p) => {
                out.push(0x03);
                out.extend_from_slice(&p.sender.0.to_be_bytes());
                out.extend_from_slice(&p.receiver.0.to_be_bytes());
                out.extend_from_slice(&(p.values.len() as u32).to_be_bytes());
                for v in &p.values {
                    out.extend_from_slice(&v.to_be_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, KeyError> {
        let mut r = Reader::new(bytes);
        let msg = match r.u8()? {
            0x01 => WireMessage::Announce(KeyIndexAnnouncement {
                sender: NodeId(r.u32()?),
                r_c: r.u32()?,
            }),
            0x02 => {
                let sender = NodeId(r.u32()?);
                let receiver = NodeId(r.u32()?);
                let nonce = r.take(NONCE_LEN)?.to_vec();
                let len = r.u32()? as usize;
                let ciphertext = r.take(len)?.to_vec();
                let tag = r.take(TAG_LEN)?.to_vec();
                WireMessage::Sealed(SealedFrame {
                    sender,
                    receiver,
                    nonce,
                    ciphertext,
                    tag,
                })
            }
            0x03 => {
                let sender = NodeId(r.u32()?);
                let receiver = NodeId(r.u32()?);
                let n = r.u32()? as usize;
                let values = (0..n).map(|_| r.u64()).collect::<Result<_, _>>()?;
                WireMessage::Plain(PlainFrame {
                    sender,
                    receiver,
                    values,
                })
            }
            _ => return Err(KeyError::Malformed("unknown message tag")),
        };
        r.finish()?;
        Ok(msg)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], KeyError> {
        if self.buf.len() < n {
            return Err(KeyError::Malformed("truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, KeyError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, KeyError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, KeyError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(self) -> Result<(), KeyError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(KeyError::Malformed("trailing bytes"))
        }
    }
}

/// One delivered message with its hop endpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRecord {
    pub from: NodeId,
    pub to: NodeId,
    pub message: WireMessage,
}

type Tap<'a> = Box<dyn FnMut(&WireRecord, &mut WireMessage) -> bool + 'a>;

/// Simulated link layer between protocol actors. Every delivered message is
/// logged; an optional tap may rewrite a message in flight or drop it by
/// returning `false`.
#[derive(Default)]
pub struct Wire<'a> {
    records: Vec<WireRecord>,
    tap: Option<Tap<'a>>,
}

impl<'a> Wire<'a> {
    pub fn new() -> Self {
        Wire {
            records: Vec::new(),
            tap: None,
        }
    }

    pub fn with_tap(tap: impl FnMut(&WireRecord, &mut WireMessage) -> bool + 'a) -> Self {
        Wire {
            records: Vec::new(),
            tap: Some(Box::new(tap)),
        }
    }

    pub fn send(&mut self, from: NodeId, to: NodeId, mut message: WireMessage) -> Option<WireMessage> {
        if let Some(tap) = self.tap.as_mut() {
            let hop = WireRecord {
                from,
                to,
                message: message.clone(),
            };
            if !tap(&hop, &mut message) {
                return None;
            }
        }
        self.records.push(WireRecord {
            from,
            to,
            message: message.clone(),
        });
        Some(message)
    }

    pub fn records(&self) -> &[WireRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<WireRecord> {
        self.records
    }
}

impl fmt::Debug for Wire<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Wire")
            .field("records", &self.records.len())
            .field("tapped", &self.tap.is_some())
            .finish()
    }
}

fn resolve_in(bank: &KeyBank, perm: &PairPermutation, r_c: u32) -> Result<PoolKey, KeyError> {
    if r_c == 0 || r_c as usize > perm.len() {
        return Err(KeyError::IndexOutOfRange {
            r_c,
            bank_size: perm.len(),
        });
    }
    Ok(bank.keys[perm.apply(r_c as usize - 1)])
}

/// A sensor source's key material and channel state.
#[derive(Clone, Debug)]
pub struct SourceNode {
    pub id: NodeId,
    pub af: NodeId,
    bank_af: KeyBank,
    bank_ss: KeyBank,
    af_perm: PairPermutation,
    /// Own permutations of the source↔source bank, keyed by peer; used to
    /// read messages arriving from that peer.
    recv_schedules: BTreeMap<NodeId, PairPermutation>,
    /// Peers' permutations, used to write messages to them.
    send_schedules: BTreeMap<NodeId, PairPermutation>,
}

/// The aggregator-forwarder's key material. It holds only the source↔AF
/// bank and one permutation per registered source.
#[derive(Clone, Debug)]
pub struct AggregatorNode {
    pub id: NodeId,
    bank_af: KeyBank,
    pair_perms: BTreeMap<NodeId, PairPermutation>,
    relayed: Vec<Vec<u8>>,
}

/// Predistributes `pool` to one AF and its sources, drawing a fresh
/// permutation of the source↔AF bank for every source/AF pair.
pub fn provision(
    pool: &KeyPool,
    af: NodeId,
    sources: &[NodeId],
    rng: &mut SimRng,
) -> (AggregatorNode, Vec<SourceNode>) {
    let mut agg = AggregatorNode {
        id: af,
        bank_af: pool.bank_af.clone(),
        pair_perms: BTreeMap::new(),
        relayed: Vec::new(),
    };
    let nodes = sources
        .iter()
        .map(|&s| {
            let perm = permute_bank_for_pair(&pool.bank_af, s, af, rng);
            agg.pair_perms.insert(s, perm.clone());
            SourceNode {
                id: s,
                af,
                bank_af: pool.bank_af.clone(),
                bank_ss: pool.bank_ss.clone(),
                af_perm: perm,
                recv_schedules: BTreeMap::new(),
                send_schedules: BTreeMap::new(),
            }
        })
        .collect();
    (agg, nodes)
}

/// Draws `R_c` uniformly from `1..=|bank_af|` and returns the key it selects
/// through the source's pair permutation.
pub fn select_session_key(source: &SourceNode, rng: &mut SimRng) -> (KeyIndexAnnouncement, Key) {
    let r_c = rng.random_range(1..=source.af_perm.len() as u32);
    let key = resolve_in(&source.bank_af, &source.af_perm, r_c).expect("index drawn in range");
    (
        KeyIndexAnnouncement {
            sender: source.id,
            r_c,
        },
        key.key,
    )
}

/// AF side of [`select_session_key`].
pub fn af_resolve_key(af: &AggregatorNode, source: NodeId, announcement: KeyIndexAnnouncement) -> Result<Key, KeyError> {
    let perm = af.pair_perms.get(&source).ok_or(KeyError::UnknownSource(source))?;
    Ok(resolve_in(&af.bank_af, perm, announcement.r_c)?.key)
}

impl SourceNode {
    pub fn af_permutation(&self) -> &PairPermutation {
        &self.af_perm
    }

    pub fn bank_af(&self) -> &KeyBank {
        &self.bank_af
    }

    pub fn bank_ss(&self) -> &KeyBank {
        &self.bank_ss
    }

    /// Key for an index announced by the AF on this source's pair.
    pub fn resolve_af_key(&self, announcement: KeyIndexAnnouncement) -> Result<Key, KeyError> {
        if announcement.sender != self.af {
            return Err(KeyError::UnknownSource(announcement.sender));
        }
        Ok(resolve_in(&self.bank_af, &self.af_perm, announcement.r_c)?.key)
    }

    /// Keys that could be behind `announcement` from this node's point of
    /// view. Without the announcing pair's permutation every bank key is
    /// equally likely.
    pub fn candidate_keys(&self, announcement: KeyIndexAnnouncement) -> Vec<KeyId> {
        if announcement.sender == self.id {
            match resolve_in(&self.bank_af, &self.af_perm, announcement.r_c) {
                Ok(k) => vec![k.id],
                Err(_) => Vec::new(),
            }
        } else {
            self.bank_af.ids().collect()
        }
    }

    /// Key ids in the order used for messages this node sends to `peer`.
    pub fn send_schedule(&self, peer: NodeId) -> Option<Vec<KeyId>> {
        let perm = self.send_schedules.get(&peer)?;
        Some((0..perm.len()).map(|i| self.bank_ss.keys[perm.apply(i)].id).collect())
    }

    /// Key ids in the order used for messages this node receives from `peer`.
    pub fn receive_schedule(&self, peer: NodeId) -> Option<Vec<KeyId>> {
        let perm = self.recv_schedules.get(&peer)?;
        Some((0..perm.len()).map(|i| self.bank_ss.keys[perm.apply(i)].id).collect())
    }
}

impl AggregatorNode {
    /// Every key id this node holds.
    pub fn held_key_ids(&self) -> Vec<KeyId> {
        self.bank_af.ids().collect()
    }

    pub fn held_keys(&self) -> &[PoolKey] {
        self.bank_af.keys()
    }

    /// Inner envelopes this node forwarded without being able to read them.
    pub fn relayed_envelopes(&self) -> &[Vec<u8>] {
        &self.relayed
    }

    pub fn knows_source(&self, source: NodeId) -> bool {
        self.pair_perms.contains_key(&source)
    }

    fn select_key_for(&self, source: NodeId, rng: &mut SimRng) -> Result<(KeyIndexAnnouncement, Key), KeyError> {
        let perm = self.pair_perms.get(&source).ok_or(KeyError::UnknownSource(source))?;
        let r_c = rng.random_range(1..=perm.len() as u32);
        let key = resolve_in(&self.bank_af, perm, r_c)?;
        Ok((KeyIndexAnnouncement { sender: self.id, r_c }, key.key))
    }
}

fn expect_announce(msg: Option<WireMessage>, from: NodeId, to: NodeId) -> Result<KeyIndexAnnouncement, KeyError> {
    match msg {
        Some(WireMessage::Announce(a)) if a.sender == from => Ok(a),
        Some(_) => Err(KeyError::Protocol(format!("expected key announcement from {from}"))),
        None => Err(KeyError::MissingMessage { from, to }),
    }
}

fn expect_sealed(msg: Option<WireMessage>, from: NodeId, to: NodeId) -> Result<SealedFrame, KeyError> {
    match msg {
        Some(WireMessage::Sealed(f)) => Ok(f),
        Some(_) => Err(KeyError::Protocol(format!("expected sealed frame from {from}"))),
        None => Err(KeyError::MissingMessage { from, to }),
    }
}

/// Sends `plaintext` from a source to its AF: plaintext `R_c`, then a frame
/// sealed under the key it selects.
pub fn source_to_af(
    source: &SourceNode,
    af: &AggregatorNode,
    wire: &mut Wire,
    plaintext: &[u8],
    rng: &mut SimRng,
) -> Result<Vec<u8>, KeyError> {
    let (ann, key) = select_session_key(source, rng);
    let frame = SealedFrame::seal(&SimCipher, &key, source.id, af.id, plaintext, rng);
    let ann = expect_announce(wire.send(source.id, af.id, WireMessage::Announce(ann)), source.id, af.id)?;
    let frame = expect_sealed(wire.send(source.id, af.id, WireMessage::Sealed(frame)), source.id, af.id)?;
    let key = af_resolve_key(af, source.id, ann)?;
    frame.open(&SimCipher, &key).ok_or(KeyError::Authentication { at: af.id })
}

/// Sends `plaintext` from the AF to one of its sources.
pub fn af_to_source(
    af: &AggregatorNode,
    source: &SourceNode,
    wire: &mut Wire,
    plaintext: &[u8],
    rng: &mut SimRng,
) -> Result<Vec<u8>, KeyError> {
    let (ann, key) = af.select_key_for(source.id, rng)?;
    let frame = SealedFrame::seal(&SimCipher, &key, af.id, source.id, plaintext, rng);
    let ann = expect_announce(wire.send(af.id, source.id, WireMessage::Announce(ann)), af.id, source.id)?;
    let frame = expect_sealed(wire.send(af.id, source.id, WireMessage::Sealed(frame)), af.id, source.id)?;
    let key = source.resolve_af_key(ann)?;
    frame.open(&SimCipher, &key).ok_or(KeyError::Authentication { at: source.id })
}

const MODE_BOOTSTRAP: u8 = 0;
const MODE_SCHEDULED: u8 = 1;

fn inner_ad(sender: NodeId, receiver: NodeId) -> Vec<u8> {
    let mut ad = b"ctxpriv-ss".to_vec();
    ad.extend_from_slice(&sender.0.to_be_bytes());
    ad.extend_from_slice(&receiver.0.to_be_bytes());
    ad
}

fn seal_inner(mode: u8, index: u32, key: &Key, sender: NodeId, receiver: NodeId, pt: &[u8], rng: &mut SimRng) -> Vec<u8> {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let mut out = vec![mode];
    out.extend_from_slice(&index.to_be_bytes());
    out.extend_from_slice(&nonce);
    out.extend(SimCipher.seal(key, &nonce, pt, &inner_ad(sender, receiver)));
    out
}

fn open_inner(receiver: &SourceNode, sender: NodeId, envelope: &[u8]) -> Result<Vec<u8>, KeyError> {
    let mut r = Reader::new(envelope);
    let mode = r.u8()?;
    let index = r.u32()?;
    let nonce: [u8; NONCE_LEN] = r.take(NONCE_LEN)?.try_into().unwrap();
    let sealed = r.buf;
    let bank = &receiver.bank_ss;
    let key = match mode {
        MODE_BOOTSTRAP => {
            if index == 0 || index as usize > bank.len() {
                return Err(KeyError::IndexOutOfRange {
                    r_c: index,
                    bank_size: bank.len(),
                });
            }
            bank.keys[index as usize - 1].key
        }
        MODE_SCHEDULED => {
            let perm = receiver
                .recv_schedules
                .get(&sender)
                .ok_or_else(|| KeyError::Protocol(format!("no channel with {sender}")))?;
            resolve_in(bank, perm, index)?.key
        }
        _ => return Err(KeyError::Malformed("unknown envelope mode")),
    };
    SimCipher
        .open(&key, &nonce, sealed, &inner_ad(sender, receiver.id))
        .ok_or(KeyError::Authentication { at: receiver.id })
}

/// Carries an inner envelope from `sender` through the AF to `receiver`,
/// sealed hop by hop under each side's source↔AF session key.
fn relay_envelope(
    sender: &SourceNode,
    receiver: &SourceNode,
    af: &mut AggregatorNode,
    wire: &mut Wire,
    envelope: &[u8],
    rng: &mut SimRng,
) -> Result<Vec<u8>, KeyError> {
    let mut framed = receiver.id.0.to_be_bytes().to_vec();
    framed.extend_from_slice(envelope);
    let at_af = source_to_af(sender, af, wire, &framed, rng)?;
    let (dest, inner) = at_af.split_at(4);
    if NodeId(u32::from_be_bytes(dest.try_into().unwrap())) != receiver.id {
        return Err(KeyError::Protocol("relay addressed to a different source".into()));
    }
    af.relayed.push(inner.to_vec());
    af_to_source(af, receiver, wire, inner, rng)
}

/// Both sources draw a permutation of the source↔source bank and send it to
/// the other through the AF. Afterwards, messages `a → b` use `b`'s
/// permutation, with the index announced by the sender.
pub fn establish_ss_channel(
    s1: &mut SourceNode,
    s2: &mut SourceNode,
    af: &mut AggregatorNode,
    wire: &mut Wire,
    rng: &mut SimRng,
) -> Result<(), KeyError> {
    let p1 = permute_bank_for_pair(&s1.bank_ss, s1.id, s2.id, rng);
    let p2 = permute_bank_for_pair(&s2.bank_ss, s2.id, s1.id, rng);
    exchange_permutations(s1, s2, af, wire, rng, p1, p2)
}

/// [`establish_ss_channel`] with caller-chosen permutations.
pub fn exchange_permutations(
    s1: &mut SourceNode,
    s2: &mut SourceNode,
    af: &mut AggregatorNode,
    wire: &mut Wire,
    rng: &mut SimRng,
    p1: PairPermutation,
    p2: PairPermutation,
) -> Result<(), KeyError> {
    if s1.af != af.id || s2.af != af.id {
        return Err(KeyError::Protocol("sources are not served by this AF".into()));
    }
    if p1.len() != s1.bank_ss.len() || p2.len() != s2.bank_ss.len() {
        return Err(KeyError::Protocol("permutation size does not match the bank".into()));
    }
    let received_by_s2 = send_permutation(s1, s2, af, wire, rng, &p1)?;
    let received_by_s1 = send_permutation(s2, s1, af, wire, rng, &p2)?;
    s1.recv_schedules.insert(s2.id, p1);
    s2.recv_schedules.insert(s1.id, p2);
    s2.send_schedules.insert(s1.id, received_by_s2);
    s1.send_schedules.insert(s2.id, received_by_s1);
    Ok(())
}

fn send_permutation(
    from: &SourceNode,
    to: &SourceNode,
    af: &mut AggregatorNode,
    wire: &mut Wire,
    rng: &mut SimRng,
    perm: &PairPermutation,
) -> Result<PairPermutation, KeyError> {
    let index = rng.random_range(1..=from.bank_ss.len() as u32);
    let key = from.bank_ss.keys[index as usize - 1].key;
    let envelope = seal_inner(MODE_BOOTSTRAP, index, &key, from.id, to.id, &perm.to_bytes(), rng);
    let delivered = relay_envelope(from, to, af, wire, &envelope, rng)?;
    let plain = open_inner(to, from.id, &delivered)?;
    PairPermutation::from_bytes(from.id, to.id, &plain)
}

/// Sends `plaintext` from one source to another over their established
/// channel, relayed (opaquely) by the AF.
pub fn source_to_source(
    from: &SourceNode,
    to: &SourceNode,
    af: &mut AggregatorNode,
    wire: &mut Wire,
    plaintext: &[u8],
    rng: &mut SimRng,
) -> Result<Vec<u8>, KeyError> {
    let perm = from
        .send_schedules
        .get(&to.id)
        .ok_or_else(|| KeyError::Protocol(format!("no channel from {} to {}", from.id, to.id)))?;
    let index = rng.random_range(1..=perm.len() as u32);
    let key = resolve_in(&from.bank_ss, perm, index)?.key;
    let envelope = seal_inner(MODE_SCHEDULED, index, &key, from.id, to.id, plaintext, rng);
    let delivered = relay_envelope(from, to, af, wire, &envelope, rng)?;
    open_inner(to, from.id, &delivered)
}

/// Tries to open an inner envelope with an arbitrary key; used to check
/// that relay traffic is opaque to whoever lacks the source↔source bank.
pub fn try_open_envelope(key: &Key, sender: NodeId, receiver: NodeId, envelope: &[u8]) -> Option<Vec<u8>> {
    let mut r = Reader::new(envelope);
    r.u8().ok()?;
    r.u32().ok()?;
    let nonce: [u8; NONCE_LEN] = r.take(NONCE_LEN).ok()?.try_into().ok()?;
    SimCipher.open(key, &nonce, r.buf, &inner_ad(sender, receiver))
}
