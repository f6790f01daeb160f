use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::governance::{endorsement_message, GovernanceView, SnapshotVerifier};
use super::topology::GOVERNANCE_CHANNEL;
use crate::contract::{Engine, InvokeError, Invocation};
use crate::grain::{issue_ingest_receipt, GrainError, SignedReceipt};
use crate::identity::{KeyPair, Org};
use crate::ledger::{Block, ChannelLedger, Endorsement, LedgerError, LedgerView, ReadWriteSet, TransactionEnvelope};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EndorseError {
    #[error("NotChannelMember: {node} is not a member of {channel}")]
    NotChannelMember { node: String, channel: String },
    #[error("Unauthorized: {0}")]
    Unauthorized(String),
    #[error("AclDenied: {0}")]
    AclDenied(String),
    #[error("SimulationFailed: {0}")]
    SimulationFailed(String),
}

/// A simulated read-write set and the endorser's signature over its digest.
/// A contract abort is still endorsed so that it can be ordered and kept
/// on the chain; `rwset.abort` carries the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalResponse {
    pub rwset: ReadWriteSet,
    pub endorsement: Endorsement,
}

/// One node's replicas of the channels its org belongs to.
pub struct Peer {
    node_id: String,
    org: Org,
    key: KeyPair,
    engine: Arc<Engine>,
    ledgers: BTreeMap<String, ChannelLedger>,
    /// Governance view after each governance block, by height.
    snapshots: Vec<Arc<GovernanceView>>,
    /// Blocks received ahead of the local tip.
    buffered: BTreeMap<String, BTreeMap<u64, Block>>,
    ledger_dir: Option<PathBuf>,
}

impl std::fmt::Debug for Peer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Peer")
            .field("node_id", &self.node_id)
            .field("channels", &self.ledgers.keys().collect::<Vec<_>>())
            .finish()
    }
}

pub fn block_file(ledger_dir: &Path, channel: &str) -> PathBuf {
    ledger_dir.join(format!("{channel}.blocks"))
}

impl Peer {
    pub fn new(node_id: &str, org: Org, key: KeyPair, engine: Arc<Engine>, ledger_dir: Option<PathBuf>) -> Self {
        Peer {
            node_id: node_id.to_string(),
            org,
            key,
            engine,
            ledgers: BTreeMap::new(),
            snapshots: Vec::new(),
            buffered: BTreeMap::new(),
            ledger_dir,
        }
    }

    /// Rebuilds a peer from its block files, re-validating every block.
    pub fn open(node_id: &str, org: Org, key: KeyPair, engine: Arc<Engine>, ledger_dir: &Path) -> Result<Self, LedgerError> {
        let mut peer = Peer::new(node_id, org, key, engine, Some(ledger_dir.to_path_buf()));
        let mut channels = Vec::new();
        for entry in std::fs::read_dir(ledger_dir)? {
            let path = entry?.path();
            if let Some(ch) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".blocks")) {
                channels.push(ch.to_string());
            }
        }
        channels.sort_by_key(|c| (c != GOVERNANCE_CHANNEL, c.clone()));
        for ch in channels {
            let blocks = ChannelLedger::load_blocks(&block_file(ledger_dir, &ch))?;
            let mut ledger = ChannelLedger::in_memory(&ch);
            for block in blocks {
                let height = block.height();
                peer.check_header(&block).map_err(|reason| LedgerError::Corrupt { index: height as usize, reason })?;
                ledger.replay(block, &SnapshotVerifier { snapshots: &peer.snapshots })?;
                if ch == GOVERNANCE_CHANNEL {
                    peer.snapshots.push(snapshot_of(&ledger, height)?);
                }
            }
            ledger.attach_file(&block_file(ledger_dir, &ch))?;
            peer.ledgers.insert(ch, ledger);
        }
        Ok(peer)
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn org(&self) -> Org {
        self.org
    }

    pub fn public_key(&self) -> Vec<u8> {
        self.key.public_key()
    }

    pub fn ledger(&self, channel: &str) -> Option<&ChannelLedger> {
        self.ledgers.get(channel)
    }

    pub fn channels(&self) -> impl Iterator<Item = &str> {
        self.ledgers.keys().map(String::as_str)
    }

    pub fn height(&self, channel: &str) -> u64 {
        self.ledgers.get(channel).map_or(0, ChannelLedger::height)
    }

    pub fn ledger_dir(&self) -> Option<&Path> {
        self.ledger_dir.as_deref()
    }

    /// Latest governance view, or an empty one before the governance genesis.
    pub fn governance(&self) -> Arc<GovernanceView> {
        self.snapshots.last().cloned().unwrap_or_default()
    }

    pub fn snapshots(&self) -> &[Arc<GovernanceView>] {
        &self.snapshots
    }

    pub fn buffered(&self) -> usize {
        self.buffered.values().map(BTreeMap::len).sum()
    }

    /// Ingest receipt for `invoice` on `channel`, signed with this node's key.
    pub fn issue_receipt(&self, channel: &str, invoice: &str) -> Result<SignedReceipt, GrainError> {
        let ledger = self
            .ledgers
            .get(channel)
            .ok_or_else(|| GrainError::AssetNotFound(format!("channel {channel} is not replicated here")))?;
        issue_ingest_receipt(ledger, invoice, &self.node_id, &self.key)
    }

    /// Simulates `env` on this node's committed state and signs the result.
    pub fn endorse(&self, env: &TransactionEnvelope) -> Result<ProposalResponse, EndorseError> {
        let ledger = self.ledgers.get(&env.channel_id).ok_or_else(|| EndorseError::NotChannelMember {
            node: self.node_id.clone(),
            channel: env.channel_id.clone(),
        })?;
        if !env.id_matches() {
            return Err(EndorseError::Unauthorized("tx_id does not match envelope".into()));
        }
        let view = self.governance();
        let role = view.membership.authenticate(env).map_err(EndorseError::Unauthorized)?;
        let inv = Invocation::from_envelope(env, role);
        let rwset = match self.engine.invoke(ledger.state(), view.membership.acl(), &inv) {
            Ok(rw) => rw,
            Err(InvokeError::ContractAbort(reason)) => ReadWriteSet::aborted(reason),
            Err(e @ InvokeError::AclDenied { .. }) => return Err(EndorseError::AclDenied(e.to_string())),
            Err(e) => return Err(EndorseError::SimulationFailed(e.to_string())),
        };
        let digest = rwset.digest().map_err(|e| EndorseError::SimulationFailed(e.to_string()))?;
        let signature = self.key.sign(&endorsement_message(&env.channel_id, &env.tx_id, &digest));
        Ok(ProposalResponse {
            rwset,
            endorsement: Endorsement {
                node_id: self.node_id.clone(),
                org: self.org.as_str().to_string(),
                rwset_digest: digest,
                signature,
            },
        })
    }

    /// Accepts a block from the orderer or another peer and commits every
    /// block that has become contiguous. Returns the committed blocks.
    pub fn deliver(&mut self, block: Block) -> Vec<Arc<Block>> {
        let ch = block.header.channel_id.clone();
        if block.height() < self.height(&ch) && self.ledgers.contains_key(&ch) {
            return Vec::new();
        }
        self.buffered.entry(ch).or_default().entry(block.height()).or_insert(block);
        self.drain()
    }

    fn drain(&mut self) -> Vec<Arc<Block>> {
        let mut committed = Vec::new();
        loop {
            let mut progressed = false;
            let mut channels: Vec<String> = self.buffered.keys().cloned().collect();
            channels.sort_by_key(|c| (c != GOVERNANCE_CHANNEL, c.clone()));
            for ch in channels {
                while let Some(block) = self.next_ready(&ch) {
                    match self.commit_block(block) {
                        Ok(b) => {
                            committed.push(b);
                            progressed = true;
                        }
                        Err(e) => {
                            tracing::warn!(node = %self.node_id, channel = %ch, error = %e, "block rejected");
                        }
                    }
                }
            }
            if !progressed {
                return committed;
            }
        }
    }

    fn next_ready(&mut self, ch: &str) -> Option<Block> {
        let next = self.height(ch);
        let known = self.ledgers.contains_key(ch);
        let gov_len = self.snapshots.len() as u64;
        let buf = self.buffered.get_mut(ch)?;
        while buf.first_key_value().is_some_and(|(h, _)| *h < next && known) {
            buf.pop_first();
        }
        let block = buf.get(&next)?;
        if ch != GOVERNANCE_CHANNEL && block.header.governance_height >= gov_len {
            return None;
        }
        if !known && ch != GOVERNANCE_CHANNEL {
            let member = self
                .snapshots
                .get(block.header.governance_height as usize)
                .and_then(|v| v.channels.get(ch))
                .is_some_and(|c| c.member_orgs.contains(&self.org));
            if !member {
                buf.remove(&next);
                tracing::warn!(node = %self.node_id, channel = %ch, "refusing blocks of a channel this org is not in");
                return None;
            }
        }
        buf.remove(&next)
    }

    fn check_header(&self, block: &Block) -> Result<(), String> {
        let h = &block.header;
        if h.channel_id == GOVERNANCE_CHANNEL && h.governance_height != h.height.saturating_sub(1) {
            return Err(format!("governance block {} must reference governance height {}", h.height, h.height.saturating_sub(1)));
        }
        Ok(())
    }

    fn commit_block(&mut self, block: Block) -> Result<Arc<Block>, LedgerError> {
        let ch = block.header.channel_id.clone();
        let height = block.height();
        self.check_header(&block).map_err(|reason| LedgerError::Corrupt { index: height as usize, reason })?;
        if !self.ledgers.contains_key(&ch) {
            let mut ledger = ChannelLedger::in_memory(&ch);
            if let Some(dir) = &self.ledger_dir {
                ledger.attach_file(&block_file(dir, &ch))?;
            }
            self.ledgers.insert(ch.clone(), ledger);
        }
        let ledger = self.ledgers.get_mut(&ch).expect("inserted above");
        let committed = ledger.commit(block, &SnapshotVerifier { snapshots: &self.snapshots })?;
        if ch == GOVERNANCE_CHANNEL {
            let view = snapshot_of(&self.ledgers[&ch], height)?;
            self.snapshots.push(view);
        }
        Ok(committed)
    }
}

fn snapshot_of(ledger: &ChannelLedger, height: u64) -> Result<Arc<GovernanceView>, LedgerError> {
    GovernanceView::from_state(ledger.state(), height)
        .map(Arc::new)
        .map_err(|e| LedgerError::Corrupt { index: height as usize, reason: e.to_string() })
}
