//! Relay protocols driven by a meeting stream.
//!
//! Node 0 is the source. Every other node is both relay and destination.
//! The source hands out a fresh coded packet on every meeting. Under the
//! naive protocol a relay forwards a uniformly random packet from its buffer;
//! under RMPR it forwards only the newest packet it got directly from the
//! source. A destination decodes once it holds `l′ = ⌈(1+ε)l⌉` distinct
//! packets.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meeting::{sample_exponential, MeetingEvent};

/// Index of the source node.
pub const SOURCE: usize = 0;

pub const DEFAULT_KAPPA_WARMUP: f64 = 0.2;

/// Coded packet identifier, issued sequentially by the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PacketId(pub u32);

impl PacketId {
    fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Naive,
    Rmpr,
}

/// What happens on a meeting between two relays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExchangeMode {
    /// Each side sends one packet.
    #[default]
    Bidirectional,
    /// One side, chosen uniformly, sends one packet.
    Unidirectional,
}

/// `l` source packets decodable from any `l′ = ⌈(1+ε)l⌉` distinct coded packets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeRule {
    pub l: u64,
    pub epsilon: f64,
    pub l_prime: u64,
}

/// `⌈(1+ε)l⌉`, snapping products within 1e-9 of an integer so that float
/// round-off (e.g. `1.1 × 10`) does not add a packet.
pub fn decode_threshold(l: u64, epsilon: f64) -> u64 {
    let raw = (1.0 + epsilon) * l as f64;
    let nearest = raw.round();
    if (raw - nearest).abs() <= 1e-9 * raw.max(1.0) {
        nearest as u64
    } else {
        raw.ceil() as u64
    }
}

impl DecodeRule {
    pub fn new(l: u64, epsilon: f64) -> Result<Self> {
        if l == 0 {
            return Err(Error::config("need at least one source packet"));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::config(format!("overhead must be non-negative, got {epsilon}")));
        }
        Ok(DecodeRule {
            l,
            epsilon,
            l_prime: decode_threshold(l, epsilon),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Source,
    RelayDestination,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub role: Role,
    /// Receptions per packet id (all senders).
    receptions: Vec<u32>,
    /// Receptions per packet id from relays only.
    relay_receptions: Vec<u32>,
    distinct: usize,
    /// RMPR: newest packet received directly from the source.
    pub newest_from_source: Option<PacketId>,
    /// Naive: every distinct packet held, in arrival order.
    pub buffer: Vec<PacketId>,
}

impl NodeState {
    fn new(role: Role) -> Self {
        NodeState {
            role,
            receptions: Vec::new(),
            relay_receptions: Vec::new(),
            distinct: 0,
            newest_from_source: None,
            buffer: Vec::new(),
        }
    }

    pub fn distinct_count(&self) -> usize {
        self.distinct
    }

    pub fn has(&self, packet: PacketId) -> bool {
        self.receptions(packet) > 0
    }

    pub fn receptions(&self, packet: PacketId) -> u32 {
        self.receptions.get(packet.index()).copied().unwrap_or(0)
    }

    pub fn relay_receptions(&self, packet: PacketId) -> u32 {
        self.relay_receptions.get(packet.index()).copied().unwrap_or(0)
    }

    /// Distinct packets held, in id order.
    pub fn distinct_packets(&self) -> impl Iterator<Item = PacketId> + '_ {
        self.receptions
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, _)| PacketId(i as u32))
    }

    /// Record one reception; returns true when the packet is new to this node.
    fn receive(&mut self, packet: PacketId, from_source: bool) -> bool {
        let i = packet.index();
        if self.receptions.len() <= i {
            self.receptions.resize(i + 1, 0);
            self.relay_receptions.resize(i + 1, 0);
        }
        self.receptions[i] += 1;
        if !from_source {
            self.relay_receptions[i] += 1;
        }
        let fresh = self.receptions[i] == 1;
        if fresh {
            self.distinct += 1;
            self.buffer.push(packet);
        }
        if from_source {
            self.newest_from_source = Some(self.newest_from_source.map_or(packet, |p| p.max(packet)));
        }
        fresh
    }
}

/// True once the node holds at least `l′` distinct packets.
pub fn decode_check(node: &NodeState, rule: &DecodeRule) -> bool {
    node.distinct_count() as u64 >= rule.l_prime
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub from: usize,
    pub to: usize,
    pub packet: PacketId,
    /// First time the receiver sees this packet.
    pub fresh: bool,
}

impl Delivery {
    pub fn from_source(&self) -> bool {
        self.from == SOURCE
    }
}

/// Deliveries caused by one meeting (at most one per direction).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MeetingOutcome {
    pub deliveries: [Option<Delivery>; 2],
}

impl MeetingOutcome {
    pub fn iter(&self) -> impl Iterator<Item = &Delivery> {
        self.deliveries.iter().flatten()
    }
}

/// Protocol state of the whole network.
#[derive(Debug, Clone)]
pub struct Network {
    protocol: Protocol,
    exchange: ExchangeMode,
    nodes: Vec<NodeState>,
    /// Node that received each packet from the source, by packet id.
    first_holder: Vec<usize>,
    last_time: f64,
}

impl Network {
    pub fn new(n: usize, protocol: Protocol, exchange: ExchangeMode) -> Result<Self> {
        if n < 2 {
            return Err(Error::config(format!("need at least 2 nodes, got {n}")));
        }
        let nodes = (0..n)
            .map(|i| NodeState::new(if i == SOURCE { Role::Source } else { Role::RelayDestination }))
            .collect();
        Ok(Network {
            protocol,
            exchange,
            nodes,
            first_holder: Vec::new(),
            last_time: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &NodeState {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    /// Packets issued by the source so far.
    pub fn issued(&self) -> u32 {
        self.first_holder.len() as u32
    }

    pub fn first_holder(&self, packet: PacketId) -> Option<usize> {
        self.first_holder.get(packet.index()).copied()
    }

    /// Total packet copies held by destinations.
    pub fn copies(&self) -> usize {
        self.nodes.iter().map(|n| n.distinct).sum()
    }

    /// Packet a relay would send right now.
    fn pick<R: Rng + ?Sized>(&self, sender: usize, rng: &mut R) -> Option<PacketId> {
        let node = &self.nodes[sender];
        match self.protocol {
            Protocol::Rmpr => node.newest_from_source,
            Protocol::Naive if node.buffer.is_empty() => None,
            Protocol::Naive => Some(node.buffer[rng.random_range(0..node.buffer.len())]),
        }
    }

    fn deliver(&mut self, from: usize, to: usize, packet: PacketId) -> Delivery {
        let fresh = self.nodes[to].receive(packet, from == SOURCE);
        Delivery { from, to, packet, fresh }
    }

    /// Apply one meeting.
    pub fn on_meeting<R: Rng + ?Sized>(&mut self, event: &MeetingEvent, rng: &mut R) -> Result<MeetingOutcome> {
        let n = self.nodes.len();
        for index in [event.a, event.b] {
            if index >= n {
                return Err(Error::UnknownNode { index, n });
            }
        }
        if event.a == event.b {
            return Err(Error::config(format!("node {} cannot meet itself", event.a)));
        }
        if !(event.time >= self.last_time) {
            return Err(Error::config(format!(
                "meeting at {} precedes already processed time {}",
                event.time, self.last_time
            )));
        }
        self.last_time = event.time;

        let mut outcome = MeetingOutcome::default();
        if event.involves(SOURCE) {
            let other = if event.a == SOURCE { event.b } else { event.a };
            let packet = PacketId(self.first_holder.len() as u32);
            self.first_holder.push(other);
            outcome.deliveries[0] = Some(self.deliver(SOURCE, other, packet));
            return Ok(outcome);
        }

        let (a, b) = (event.a, event.b);
        match self.exchange {
            ExchangeMode::Bidirectional => {
                // Both choices are made from the state before the exchange.
                let to_b = self.pick(a, rng);
                let to_a = self.pick(b, rng);
                outcome.deliveries[0] = to_b.map(|p| self.deliver(a, b, p));
                outcome.deliveries[1] = to_a.map(|p| self.deliver(b, a, p));
            }
            ExchangeMode::Unidirectional => {
                let (from, to) = if rng.random::<bool>() { (a, b) } else { (b, a) };
                outcome.deliveries[0] = self.pick(from, rng).map(|p| self.deliver(from, to, p));
            }
        }
        Ok(outcome)
    }

    /// Receivers of each packet that got it at least once from a relay,
    /// bucketed by total receptions `k`.
    pub fn duplication_histogram(&self) -> BTreeMap<u32, u64> {
        let mut hist = BTreeMap::new();
        for node in self.nodes.iter().skip(1) {
            for (i, &relayed) in node.relay_receptions.iter().enumerate() {
                if relayed > 0 {
                    *hist.entry(node.receptions[i]).or_insert(0) += 1;
                }
            }
        }
        hist
    }
}

/// Everything a single trial needs besides the event stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n: usize,
    pub rule: DecodeRule,
    pub protocol: Protocol,
    pub exchange: ExchangeMode,
    /// Events later than this end the trial as incomplete.
    pub horizon: Option<f64>,
    /// Fraction of consumed meetings discarded before measuring κ.
    pub kappa_warmup: f64,
    /// Keep consuming events after every node decoded until the source has
    /// met every node, so that `relay_init_time` is always observed.
    pub wait_for_relay_init: bool,
    /// Check protocol invariants on every meeting; violations abort the trial.
    pub audit: bool,
}

impl ProtocolConfig {
    pub fn new(n: usize, rule: DecodeRule, protocol: Protocol) -> Self {
        ProtocolConfig {
            n,
            rule,
            protocol,
            exchange: ExchangeMode::Bidirectional,
            horizon: None,
            kappa_warmup: DEFAULT_KAPPA_WARMUP,
            wait_for_relay_init: false,
            audit: false,
        }
    }
}

/// Reception counters of one trial beyond the serialized record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialCounters {
    /// Time at which the source had met every other node.
    pub relay_init_time: Option<f64>,
    pub source_meetings: u64,
    pub receptions: u64,
    pub fresh_receptions: u64,
    /// Relay-to-relay receptions after the κ warm-up window.
    pub relay_receptions: u64,
    pub fresh_relay_receptions: u64,
}

/// Measurements of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Decode time per node, indexed by node; the source entry is `None`.
    pub decode_times: Vec<Option<f64>>,
    /// Latest decode time; `None` when the trial did not complete.
    pub spreading_time: Option<f64>,
    pub duplication_histogram: BTreeMap<u32, u64>,
    /// Fresh fraction of relay-to-relay receptions after warm-up.
    pub nonredundant_ratio: Option<f64>,
    pub meetings_consumed: u64,
    #[serde(skip)]
    pub counters: TrialCounters,
}

impl TrialRecord {
    pub fn decode_time(&self, node: usize) -> Option<f64> {
        self.decode_times.get(node).copied().flatten()
    }

    /// Mean decode time over destinations that decoded.
    pub fn mean_decode_time(&self) -> Option<f64> {
        let times: Vec<f64> = self.decode_times.iter().flatten().copied().collect();
        (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64)
    }

    /// Mean redundant receptions per relay-delivered (packet, receiver) pair.
    pub fn duplication_mean(&self) -> Option<f64> {
        duplication_mean(&self.duplication_histogram)
    }
}

pub fn duplication_mean(hist: &BTreeMap<u32, u64>) -> Option<f64> {
    let pairs: u64 = hist.values().sum();
    let redundant: u64 = hist.iter().map(|(&k, &c)| (k as u64 - 1) * c).sum();
    (pairs > 0).then(|| redundant as f64 / pairs as f64)
}

/// Invariant bookkeeping for audited trials.
struct Audit {
    copies: usize,
}

impl Audit {
    fn check(&mut self, net: &Network, before: [usize; 2], event: &MeetingEvent, outcome: &MeetingOutcome) -> Result<()> {
        for (slot, node) in [event.a, event.b].into_iter().enumerate() {
            if net.nodes[node].distinct < before[slot] {
                return Err(Error::Invariant(format!("node {node} lost packets")));
            }
        }
        let copies = net.copies();
        if copies < self.copies {
            return Err(Error::Invariant("network copy count decreased".into()));
        }
        self.copies = copies;
        for d in outcome.iter() {
            if d.from_source() {
                continue;
            }
            match net.protocol {
                Protocol::Rmpr => {
                    if net.first_holder(d.packet) != Some(d.from) {
                        return Err(Error::Invariant(format!(
                            "node {} forwarded packet {} it did not get from the source",
                            d.from, d.packet.0
                        )));
                    }
                }
                Protocol::Naive => {
                    if !net.nodes[d.from].has(d.packet) {
                        return Err(Error::Invariant(format!(
                            "node {} forwarded packet {} outside its buffer",
                            d.from, d.packet.0
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// The packets present anywhere in the network are exactly those issued.
    fn final_check(net: &Network) -> Result<()> {
        let issued = net.issued() as usize;
        let mut seen = vec![false; issued];
        let mut newest_issued = vec![None; net.nodes.len()];
        for (id, &holder) in net.first_holder.iter().enumerate() {
            newest_issued[holder] = Some(PacketId(id as u32));
        }
        for (index, node) in net.nodes.iter().enumerate().skip(1) {
            for p in node.distinct_packets() {
                match seen.get_mut(p.index()) {
                    Some(slot) => *slot = true,
                    None => return Err(Error::Invariant(format!("packet {} was never issued", p.0))),
                }
            }
            if net.protocol == Protocol::Rmpr && node.newest_from_source != newest_issued[index] {
                return Err(Error::Invariant(format!("node {index} has a stale newest packet")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Invariant(
                "distinct packets in network differ from source meetings".into(),
            ));
        }
        Ok(())
    }
}

/// Run the protocol over `events` until every destination decodes.
pub fn run_trial<I, R>(config: &ProtocolConfig, events: I, rng: &mut R) -> Result<TrialRecord>
where
    I: IntoIterator<Item = MeetingEvent>,
    R: Rng + ?Sized,
{
    let n = config.n;
    let mut net = Network::new(n, config.protocol, config.exchange)?;
    if !(0.0..1.0).contains(&config.kappa_warmup) {
        return Err(Error::config("kappa warm-up fraction must lie in [0, 1)"));
    }
    let mut decode_times = vec![None; n];
    let mut undecoded = n - 1;
    let mut met_by_source = vec![false; n];
    met_by_source[SOURCE] = true;
    let mut unmet = n - 1;
    let mut counters = TrialCounters::default();
    // Relay-to-relay receptions tagged with the meeting index: (index << 1) | fresh.
    let mut relay_log: Vec<u64> = Vec::new();
    let mut audit = config.audit.then_some(Audit { copies: 0 });
    let mut meetings: u64 = 0;
    let mut stop_reason = None;

    for event in events {
        if matches!(config.horizon, Some(h) if event.time > h) {
            stop_reason = Some(format!("horizon {} reached", config.horizon.unwrap()));
            break;
        }
        let distinct_of = |i: usize| net.nodes.get(i).map_or(0, |s| s.distinct);
        let before = [distinct_of(event.a), distinct_of(event.b)];
        let outcome = net.on_meeting(&event, rng)?;
        if let Some(audit) = audit.as_mut() {
            audit.check(&net, before, &event, &outcome)?;
        }
        for d in outcome.iter() {
            counters.receptions += 1;
            counters.fresh_receptions += d.fresh as u64;
            if d.from_source() {
                counters.source_meetings += 1;
                if !met_by_source[d.to] {
                    met_by_source[d.to] = true;
                    unmet -= 1;
                    if unmet == 0 {
                        counters.relay_init_time = Some(event.time);
                    }
                }
            } else {
                relay_log.push(meetings << 1 | d.fresh as u64);
            }
            if d.fresh && decode_times[d.to].is_none() && decode_check(&net.nodes[d.to], &config.rule) {
                decode_times[d.to] = Some(event.time);
                undecoded -= 1;
            }
        }
        meetings += 1;
        if undecoded == 0 && (!config.wait_for_relay_init || unmet == 0) {
            break;
        }
    }

    if audit.is_some() {
        Audit::final_check(&net)?;
    }

    let cutoff = (config.kappa_warmup * meetings as f64).floor() as u64;
    for &entry in relay_log.iter().filter(|&&e| e >> 1 >= cutoff) {
        counters.relay_receptions += 1;
        counters.fresh_relay_receptions += entry & 1;
    }
    let complete = undecoded == 0;
    let record = TrialRecord {
        spreading_time: complete
            .then(|| decode_times.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)),
        decode_times,
        duplication_histogram: net.duplication_histogram(),
        nonredundant_ratio: (counters.relay_receptions > 0)
            .then(|| counters.fresh_relay_receptions as f64 / counters.relay_receptions as f64),
        meetings_consumed: meetings,
        counters,
    };
    if complete {
        Ok(record)
    } else {
        Err(Error::Incomplete {
            reason: stop_reason.unwrap_or_else(|| "event stream exhausted".into()),
            partial: Box::new(record),
        })
    }
}

/// One sample of the three-node duplication subsystem (source, relay `i`,
/// destination `j`, all pairs meeting at rate `lambda`).
///
/// Returns the number `k ≥ 1` of `i`–`j` meetings before `i` next meets the
/// source, conditioned on at least one; `k − 1` of those receptions are
/// redundant.
pub fn duplication_trial<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u32> {
    loop {
        let next_source = sample_exponential(lambda, rng)?;
        let mut t = sample_exponential(lambda, rng)?;
        let mut k = 0;
        while t < next_source {
            k += 1;
            t += sample_exponential(lambda, rng)?;
        }
        if k >= 1 {
            return Ok(k);
        }
    }
}
