use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::governance::{GovernanceView, GOVERNANCE};
use super::orderer::{Enqueued, Orderer};
use super::peer::{EndorseError, Peer};
use super::topology::{LinkConfig, Topology, GOVERNANCE_CHANNEL};
use crate::digest::Digest;
use crate::doc::Doc;
use crate::identity::{sign_envelope, Identity, KeyPair};
use crate::ledger::{Block, Endorsement, EnvelopeBody, LedgerView, ReadWriteSet, TransactionEnvelope, TxEntry};

/// A participant able to sign envelopes.
#[derive(Debug, Clone)]
pub struct Client {
    pub participant_id: String,
    key: KeyPair,
    identity: Identity,
}

impl Client {
    pub fn new(participant_id: &str, key: KeyPair) -> Self {
        let identity = key.identity(participant_id, 0);
        Client { participant_id: participant_id.to_string(), key, identity }
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn sign(&self, body: EnvelopeBody) -> TransactionEnvelope {
        sign_envelope(body, &self.key, &self.identity).expect("client identity matches its key")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error(transparent)]
    Endorse(#[from] EndorseError),
    #[error("PolicyNotMet: {0}")]
    PolicyNotMet(String),
    #[error("EndorsementMismatch: {0}")]
    EndorsementMismatch(String),
    #[error("UnknownNode: {0}")]
    UnknownNode(String),
    #[error("UnknownChannel: {0}")]
    UnknownChannel(String),
}

/// Result of a gateway submission. `abort` is set when the contract
/// rejected the transaction during simulation; it is ordered anyway and
/// will commit as INVALID.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Submission {
    pub tx_id: Digest,
    pub channel_id: String,
    pub abort: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TxStatus {
    Pending,
    Valid { block_height: u64, tx_index: u32 },
    Invalid { block_height: u64, tx_index: u32, reason: String },
}

/// Emitted for every block a node commits.
#[derive(Debug, Clone)]
pub struct CommitNotice {
    pub node_id: String,
    pub block: Arc<Block>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NetworkStats {
    pub submitted: u64,
    pub blocks_cut: u64,
    pub deliveries: u64,
    pub dropped: u64,
    pub pulls: u64,
}

#[derive(Debug)]
enum Message {
    Submit(Box<TxEntry>),
    BatchTimer { channel: String, generation: u64 },
    Deliver { to: String, block: Box<Block> },
    Pull { node: String, channel: String },
}

#[derive(Debug)]
struct Scheduled {
    at: u64,
    seq: u64,
    msg: Message,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Seeded in-process message bus with per-message delay and loss.
#[derive(Debug)]
struct Bus {
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    rng: ChaCha8Rng,
    link: LinkConfig,
    in_flight_blocks: usize,
}

impl Bus {
    fn new(seed: u64, link: LinkConfig) -> Self {
        Bus { heap: BinaryHeap::new(), seq: 0, rng: ChaCha8Rng::seed_from_u64(seed), link, in_flight_blocks: 0 }
    }

    fn schedule(&mut self, at: u64, msg: Message) {
        if matches!(msg, Message::Deliver { .. }) {
            self.in_flight_blocks += 1;
        }
        self.seq += 1;
        self.heap.push(Scheduled { at, seq: self.seq, msg });
    }

    fn delay(&mut self) -> u64 {
        self.rng.gen_range(self.link.min_delay_ms..=self.link.max_delay_ms)
    }

    /// Sends over a simulated link. Returns false when the message is lost.
    fn send(&mut self, now: u64, msg: Message, lossy: bool) -> bool {
        let delay = self.delay();
        if lossy && self.link.drop_probability > 0.0 && self.rng.gen_bool(self.link.drop_probability) {
            return false;
        }
        self.schedule(now + delay, msg);
        true
    }

    fn next_at(&self) -> Option<u64> {
        self.heap.peek().map(|s| s.at)
    }

    fn pop_due(&mut self, at: u64) -> Vec<Message> {
        let mut out = Vec::new();
        while self.heap.peek().is_some_and(|s| s.at == at) {
            let s = self.heap.pop().expect("peeked");
            if matches!(s.msg, Message::Deliver { .. }) {
                self.in_flight_blocks -= 1;
            }
            out.push(s.msg);
        }
        out
    }
}

/// Per-node tip and state digest of one channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplicaStatus {
    pub node_id: String,
    pub height: u64,
    pub tip: Digest,
    pub state_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChannelConvergence {
    pub channel_id: String,
    pub replicas: Vec<ReplicaStatus>,
    pub converged: bool,
}

type CommitObserver = Box<dyn FnMut(&CommitNotice) + Send>;

/// The whole consortium in one process: peers, the orderer, and the bus
/// between them. Time is simulated in milliseconds since `topology.epoch_ms`.
pub struct Network {
    topology: Topology,
    peers: BTreeMap<String, Peer>,
    orderer: Orderer,
    bus: Bus,
    now: u64,
    nonce: u64,
    parallel: bool,
    submitted: HashMap<Digest, String>,
    pulls: BTreeSet<(String, String)>,
    observers: Vec<CommitObserver>,
    stats: NetworkStats,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network").field("now", &self.now).field("peers", &self.peers).finish()
    }
}

impl Network {
    pub(crate) fn assemble(topology: Topology, peers: BTreeMap<String, Peer>, orderer: Orderer) -> Self {
        let bus = Bus::new(topology.seed ^ 0x6e65_7477_6f72_6b00, topology.link.clone());
        Network {
            topology,
            peers,
            orderer,
            bus,
            now: 0,
            nonce: 0,
            parallel: false,
            submitted: HashMap::new(),
            pulls: BTreeSet::new(),
            observers: Vec::new(),
            stats: NetworkStats::default(),
        }
    }

    /// Commits deliveries of one time step on worker threads, one per node.
    pub fn set_parallel(&mut self, parallel: bool) {
        self.parallel = parallel;
    }

    pub fn on_commit(&mut self, observer: impl FnMut(&CommitNotice) + Send + 'static) {
        self.observers.push(Box::new(observer));
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn peer(&self, node_id: &str) -> Option<&Peer> {
        self.peers.get(node_id)
    }

    pub fn peers(&self) -> impl Iterator<Item = &Peer> {
        self.peers.values()
    }

    pub fn orderer(&self) -> &Orderer {
        &self.orderer
    }

    pub fn stats(&self) -> &NetworkStats {
        &self.stats
    }

    /// Simulated time, ms since the epoch.
    pub fn now(&self) -> u64 {
        self.now
    }

    /// Wall-clock style timestamp, UTC ms.
    pub fn timestamp(&self) -> u64 {
        self.topology.epoch_ms + self.now
    }

    pub fn is_idle(&self) -> bool {
        self.bus.heap.is_empty() && self.lagging().is_empty()
    }

    /// Builds and signs an envelope with a fresh nonce and the current time.
    pub fn envelope(&mut self, client: &Client, channel: &str, contract: &str, operation: &str, args: Doc) -> TransactionEnvelope {
        self.nonce += 1;
        client.sign(EnvelopeBody {
            channel_id: channel.to_string(),
            contract_id: contract.to_string(),
            operation: operation.to_string(),
            args,
            submitter: client.participant_id.clone(),
            nonce: self.nonce,
            timestamp: self.timestamp(),
        })
    }

    /// Signs, endorses through `gateway`, and submits.
    pub fn invoke(
        &mut self,
        gateway: &str,
        client: &Client,
        channel: &str,
        contract: &str,
        operation: &str,
        args: Doc,
    ) -> Result<Submission, SubmitError> {
        let env = self.envelope(client, channel, contract, operation, args);
        self.submit(gateway, env)
    }

    /// Collects endorsements from every member node of the envelope's
    /// channel and submits the set that agrees with the gateway's own
    /// simulation.
    pub fn submit(&mut self, gateway: &str, env: TransactionEnvelope) -> Result<Submission, SubmitError> {
        let gw = self.peers.get(gateway).ok_or_else(|| SubmitError::UnknownNode(gateway.to_string()))?;
        let own = gw.endorse(&env)?;
        let view = gw.governance();
        let (config, rule) = view.channel(&env.channel_id).map_err(SubmitError::UnknownChannel)?;
        let mut all = vec![own.endorsement.clone()];
        for peer in self.peers.values() {
            if peer.node_id() == gateway || !config.member_orgs.contains(&peer.org()) {
                continue;
            }
            match peer.endorse(&env) {
                Ok(r) => all.push(r.endorsement),
                Err(e) => tracing::debug!(node = peer.node_id(), error = %e, "endorsement refused"),
            }
        }
        let agreeing: Vec<Endorsement> =
            all.iter().filter(|e| e.rwset_digest == own.endorsement.rwset_digest).cloned().collect();
        let orgs: BTreeSet<&str> = agreeing.iter().map(|e| e.org.as_str()).collect();
        let chosen = if rule.satisfied(orgs.len(), config.member_orgs.len()) { agreeing } else { all };
        self.submit_endorsed(gateway, env, own.rwset, chosen)
    }

    /// Submits with caller-chosen endorsements; checks digest agreement and
    /// the channel policy before queueing at the orderer.
    pub fn submit_endorsed(
        &mut self,
        gateway: &str,
        envelope: TransactionEnvelope,
        rwset: ReadWriteSet,
        endorsements: Vec<Endorsement>,
    ) -> Result<Submission, SubmitError> {
        let gw = self.peers.get(gateway).ok_or_else(|| SubmitError::UnknownNode(gateway.to_string()))?;
        let view = gw.governance();
        let channel = envelope.channel_id.clone();
        let (config, rule) = view.channel(&channel).map_err(SubmitError::UnknownChannel)?;
        let digest = rwset.digest().map_err(|e| SubmitError::EndorsementMismatch(e.to_string()))?;
        let distinct: BTreeSet<Digest> = endorsements.iter().map(|e| e.rwset_digest).collect();
        if distinct.len() > 1 || distinct.iter().any(|d| *d != digest) {
            return Err(SubmitError::EndorsementMismatch(format!(
                "{} distinct read-write set digests among {} endorsements",
                distinct.len().max(2),
                endorsements.len()
            )));
        }
        let abort = rwset.abort.clone();
        let entry = TxEntry { envelope, rwset, endorsements };
        let orgs = view.endorsing_orgs(&channel, &entry).map_err(SubmitError::PolicyNotMet)?;
        if !rule.satisfied(orgs.len(), config.member_orgs.len()) {
            return Err(SubmitError::PolicyNotMet(format!(
                "{rule:?} needs more than {} of {} orgs",
                orgs.len(),
                config.member_orgs.len()
            )));
        }
        let tx_id = entry.envelope.tx_id;
        self.submitted.insert(tx_id, channel.clone());
        self.stats.submitted += 1;
        self.bus.send(self.now, Message::Submit(Box::new(entry)), false);
        Ok(Submission { tx_id, channel_id: channel, abort })
    }

    pub fn tx_status(&self, node_id: &str, tx_id: &Digest) -> Option<TxStatus> {
        let peer = self.peers.get(node_id)?;
        for ch in peer.channels() {
            if let Some(r) = peer.ledger(ch).and_then(|l| l.tx_record(tx_id)) {
                return Some(match &r.reason {
                    None => TxStatus::Valid { block_height: r.at.block_height, tx_index: r.at.tx_index },
                    Some(reason) => TxStatus::Invalid {
                        block_height: r.at.block_height,
                        tx_index: r.at.tx_index,
                        reason: reason.clone(),
                    },
                });
            }
        }
        let channel = self.submitted.get(tx_id)?;
        peer.ledger(channel).map(|_| TxStatus::Pending)
    }

    /// Processes events until nothing is in flight and every member node has
    /// caught up with the orderer on every channel.
    pub fn run_until_idle(&mut self) {
        loop {
            if self.step(u64::MAX) {
                continue;
            }
            if !self.schedule_pulls() {
                return;
            }
        }
    }

    /// Processes events due up to simulated time `t`, then sets the clock to `t`.
    pub fn advance_to(&mut self, t: u64) {
        loop {
            if self.step(t) {
                continue;
            }
            if !self.schedule_pulls() || self.bus.next_at().is_some_and(|at| at > t) {
                break;
            }
        }
        self.now = self.now.max(t);
    }

    pub fn advance_by(&mut self, ms: u64) {
        self.advance_to(self.now + ms);
    }

    fn step(&mut self, limit: u64) -> bool {
        let Some(at) = self.bus.next_at() else { return false };
        if at > limit {
            return false;
        }
        self.now = self.now.max(at);
        let mut deliveries: BTreeMap<String, Vec<Block>> = BTreeMap::new();
        for msg in self.bus.pop_due(at) {
            match msg {
                Message::Submit(entry) => self.on_submit(*entry),
                Message::BatchTimer { channel, generation } => {
                    if self.orderer.timer_due(&channel, generation) {
                        self.cut(&channel);
                    }
                }
                Message::Pull { node, channel } => self.on_pull(node, channel),
                Message::Deliver { to, block } => deliveries.entry(to).or_default().push(*block),
            }
        }
        let committed = self.commit_deliveries(deliveries);
        self.after_commits(committed);
        if self.bus.in_flight_blocks == 0 {
            self.schedule_pulls();
        }
        true
    }

    fn on_submit(&mut self, entry: TxEntry) {
        let channel = entry.envelope.channel_id.clone();
        match self.orderer.enqueue(entry) {
            Ok(Enqueued::CutNow) => self.cut(&channel),
            Ok(Enqueued::StartTimer { generation, timeout_ms }) => {
                self.bus.schedule(self.now + timeout_ms, Message::BatchTimer { channel, generation });
            }
            Ok(Enqueued::Waiting) => {}
            Err(e) => tracing::warn!(error = %e, "orderer rejected submission"),
        }
    }

    fn cut(&mut self, channel: &str) {
        let created_at = self.timestamp();
        let Some((block, follow_up)) = self.orderer.cut_block(channel, created_at) else { return };
        self.stats.blocks_cut += 1;
        self.broadcast(&block);
        match follow_up {
            Some(Enqueued::CutNow) => self.cut(channel),
            Some(Enqueued::StartTimer { generation, timeout_ms }) => self.bus.schedule(
                self.now + timeout_ms,
                Message::BatchTimer { channel: channel.to_string(), generation },
            ),
            _ => {}
        }
    }

    fn broadcast(&mut self, block: &Block) {
        let host = self.orderer.node_id().to_string();
        for to in self.orderer.members(&block.header.channel_id).to_vec() {
            let lossy = to != host;
            let msg = Message::Deliver { to: to.clone(), block: Box::new(block.clone()) };
            if !self.bus.send(self.now, msg, lossy) {
                self.stats.dropped += 1;
            }
        }
    }

    fn commit_deliveries(&mut self, mut deliveries: BTreeMap<String, Vec<Block>>) -> Vec<(String, Vec<Arc<Block>>)> {
        self.stats.deliveries += deliveries.values().map(|v| v.len() as u64).sum::<u64>();
        let work: Vec<(&mut Peer, Vec<Block>)> = self
            .peers
            .iter_mut()
            .filter_map(|(id, p)| deliveries.remove(id).map(|blocks| (p, blocks)))
            .collect();
        let run = |peer: &mut Peer, blocks: Vec<Block>| -> (String, Vec<Arc<Block>>) {
            let mut out = Vec::new();
            for b in blocks {
                out.extend(peer.deliver(b));
            }
            (peer.node_id().to_string(), out)
        };
        if self.parallel && work.len() > 1 {
            std::thread::scope(|s| {
                let handles: Vec<_> = work.into_iter().map(|(p, b)| s.spawn(move || run(p, b))).collect();
                handles.into_iter().map(|h| h.join().expect("peer thread panicked")).collect()
            })
        } else {
            work.into_iter().map(|(p, b)| run(p, b)).collect()
        }
    }

    fn after_commits(&mut self, committed: Vec<(String, Vec<Arc<Block>>)>) {
        let host = self.orderer.node_id().to_string();
        for (node_id, blocks) in committed {
            for block in blocks {
                if node_id == host && block.header.channel_id == GOVERNANCE_CHANNEL {
                    self.open_created_channels(&block);
                }
                let notice = CommitNotice { node_id: node_id.clone(), block };
                for observer in &mut self.observers {
                    observer(&notice);
                }
            }
        }
    }

    /// Emits the genesis block of every channel created by a valid
    /// transaction in a governance block committed at the orderer's node.
    fn open_created_channels(&mut self, gov_block: &Block) {
        let host = &self.peers[self.orderer.node_id()];
        let view = host.governance();
        for (i, tx) in gov_block.transactions.iter().enumerate() {
            let valid = gov_block.validation.get(i).is_some_and(|v| v.valid);
            if !valid || tx.envelope.contract_id != GOVERNANCE || tx.envelope.operation != "create_channel" {
                continue;
            }
            let Some(config) = tx
                .envelope
                .args
                .get("channel")
                .and_then(|c| c.get("channel_id"))
                .and_then(Doc::as_str)
                .and_then(|id| view.channels.get(id))
                .cloned()
            else {
                continue;
            };
            let members = member_nodes(&self.topology, &view, &config.channel_id);
            let genesis = super::bootstrap::channel_genesis(
                &config,
                tx.envelope.clone(),
                gov_block.height(),
                self.timestamp(),
            );
            if self.orderer.open_channel(config, members, 0, Digest::ZERO).is_ok() {
                self.orderer.record_genesis(&genesis).expect("channel just opened");
                self.broadcast(&genesis);
            }
        }
    }

    /// Member nodes of a channel that are behind the orderer.
    fn lagging(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for ch in self.orderer.channel_ids() {
            let target = self.orderer.next_height(ch);
            for node in self.orderer.members(ch) {
                if self.peers.get(node).is_some_and(|p| p.height(ch) < target) {
                    out.push((node.clone(), ch.to_string()));
                }
            }
        }
        out
    }

    /// Schedules anti-entropy pulls for lagging replicas. Returns true when
    /// anything is now pending on the bus.
    fn schedule_pulls(&mut self) -> bool {
        if self.bus.in_flight_blocks == 0 {
            for (node, channel) in self.lagging() {
                if self.pulls.insert((node.clone(), channel.clone())) {
                    let at = self.now + self.topology.link.catch_up_ms;
                    self.bus.schedule(at, Message::Pull { node, channel });
                }
            }
        }
        !self.bus.heap.is_empty()
    }

    /// Serves missing blocks from the most advanced other member, falling
    /// back to the orderer's cache when no member holds them.
    fn on_pull(&mut self, node: String, channel: String) {
        self.pulls.remove(&(node.clone(), channel.clone()));
        self.stats.pulls += 1;
        let Some(peer) = self.peers.get(&node) else { return };
        let from = peer.height(&channel);
        let target = self.orderer.next_height(&channel);
        let source = self
            .orderer
            .members(&channel)
            .iter()
            .filter(|m| **m != node)
            .filter_map(|m| self.peers.get(m))
            .max_by_key(|p| (p.height(&channel), std::cmp::Reverse(p.node_id().to_string())));
        let mut blocks = Vec::new();
        for h in from..target {
            let stored = source.and_then(|s| s.ledger(&channel)).and_then(|l| l.store().get(h)).map(|b| (**b).clone());
            match stored.or_else(|| self.orderer.cached_block(&channel, h).cloned()) {
                Some(b) => blocks.push(b),
                None => break,
            }
        }
        for mut b in blocks {
            b.validation.clear();
            if !self.bus.send(self.now, Message::Deliver { to: node.clone(), block: Box::new(b) }, true) {
                self.stats.dropped += 1;
            }
        }
    }

    /// Moves the clock past every committed block after a restart.
    pub(crate) fn resume_clock(&mut self) {
        let latest = self
            .peers
            .values()
            .flat_map(|p| p.channels().filter_map(move |c| p.ledger(c)))
            .filter_map(|l| l.store().tip().map(|b| b.header.created_at))
            .max()
            .unwrap_or(self.topology.epoch_ms);
        self.now = latest.saturating_sub(self.topology.epoch_ms) + 1;
    }

    pub fn convergence(&self) -> Vec<ChannelConvergence> {
        self.orderer
            .channel_ids()
            .map(|ch| {
                let replicas: Vec<ReplicaStatus> = self
                    .orderer
                    .members(ch)
                    .iter()
                    .filter_map(|n| self.peers.get(n))
                    .map(|p| {
                        let l = p.ledger(ch);
                        ReplicaStatus {
                            node_id: p.node_id().to_string(),
                            height: p.height(ch),
                            tip: l.map_or(Digest::ZERO, |l| l.store().tip_digest()),
                            state_hash: l.map_or(Digest::ZERO, |l| l.state().state_hash()),
                        }
                    })
                    .collect();
                let converged = replicas
                    .windows(2)
                    .all(|w| (w[0].height, w[0].tip, w[0].state_hash) == (w[1].height, w[1].tip, w[1].state_hash));
                ChannelConvergence { channel_id: ch.to_string(), replicas, converged }
            })
            .collect()
    }
}

/// Node ids (topology order) whose org is a member of `channel`.
pub(crate) fn member_nodes(topology: &Topology, view: &GovernanceView, channel: &str) -> Vec<String> {
    let Some(config) = view.channels.get(channel) else { return Vec::new() };
    topology
        .nodes
        .iter()
        .filter(|n| config.member_orgs.contains(&n.org))
        .map(|n| n.node_id.clone())
        .collect()
}
