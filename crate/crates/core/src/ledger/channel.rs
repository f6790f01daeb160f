use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::store::decode_record;
use super::{
    read_block_file, validate_and_commit, Block, BlockFileWriter, BlockStore, LedgerError,
    TxVerifier, WorldState,
};
use crate::digest::Digest;
use crate::doc::Doc;

/// Where a committed transaction sits in the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRef {
    pub tx_id: Digest,
    pub block_height: u64,
    pub tx_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub at: TxRef,
    pub valid: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommittedEvent {
    pub event_name: String,
    pub payload: Doc,
    pub tx_id: Digest,
    pub block_height: u64,
    pub channel_id: String,
}

/// Read access to one channel's committed data.
pub trait LedgerView {
    fn channel_id(&self) -> &str;
    fn state(&self) -> &WorldState;
    /// Valid transactions that wrote `key`, oldest first.
    fn key_history(&self, key: &str) -> &[TxRef];
    fn tx_record(&self, tx_id: &Digest) -> Option<&TxRecord>;
    fn events(&self) -> &[CommittedEvent];
}

/// A channel's block store plus the world state and indexes derived from it.
#[derive(Debug)]
pub struct ChannelLedger {
    store: BlockStore,
    state: WorldState,
    txs: HashMap<Digest, TxRecord>,
    history: HashMap<String, Vec<TxRef>>,
    events: Vec<CommittedEvent>,
}

impl ChannelLedger {
    pub fn in_memory(channel_id: &str) -> Self {
        Self::with_store(BlockStore::in_memory(channel_id))
    }

    fn with_store(store: BlockStore) -> Self {
        ChannelLedger {
            store,
            state: WorldState::new(),
            txs: HashMap::new(),
            history: HashMap::new(),
            events: Vec::new(),
        }
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub fn height(&self) -> u64 {
        self.store.next_height()
    }

    /// Validates a block against the current state, records the flags on it,
    /// and appends it.
    pub fn commit(
        &mut self,
        mut block: Block,
        verifier: &dyn TxVerifier,
    ) -> Result<Arc<Block>, LedgerError> {
        self.store.check_append(&block)?;
        let mut next = self.state.clone();
        block.validation = validate_and_commit(&mut next, &block, verifier);
        let block = self.store.append_block(block)?;
        self.state = next;
        self.index(&block);
        Ok(block)
    }

    /// Re-commits a block loaded from disk, requiring the recomputed flags
    /// to equal the stored ones.
    pub fn replay(&mut self, block: Block, verifier: &dyn TxVerifier) -> Result<(), LedgerError> {
        let stored = block.validation.clone();
        let height = block.height();
        let committed = self.commit(block, verifier)?;
        if committed.validation != stored {
            return Err(LedgerError::Corrupt {
                index: height as usize,
                reason: "stored validity flags disagree with replay".into(),
            });
        }
        Ok(())
    }

    /// Starts mirroring future commits to `path`.
    pub fn attach_file(&mut self, path: &Path) -> Result<(), LedgerError> {
        self.store.attach_writer(BlockFileWriter::open(path)?);
        Ok(())
    }

    /// Decodes a block file written by [`ChannelLedger::attach_file`].
    pub fn load_blocks(path: &Path) -> Result<Vec<Block>, LedgerError> {
        if !path.exists() {
            return Ok(Vec::new());
        }
        read_block_file(path)?
            .iter()
            .enumerate()
            .map(|(i, rec)| decode_record(i, rec))
            .collect()
    }

    fn index(&mut self, block: &Block) {
        let height = block.height();
        let channel = &block.header.channel_id;
        for (i, (tx, flag)) in block.transactions.iter().zip(&block.validation).enumerate() {
            let at = TxRef { tx_id: tx.envelope.tx_id, block_height: height, tx_index: i as u32 };
            // A duplicate id keeps its first record.
            self.txs.entry(at.tx_id).or_insert_with(|| TxRecord {
                at,
                valid: flag.valid,
                reason: flag.reason.clone(),
            });
            if flag.valid {
                for w in &tx.rwset.writes {
                    self.history.entry(w.key.clone()).or_default().push(at);
                }
                for e in &tx.rwset.events {
                    self.events.push(CommittedEvent {
                        event_name: e.event_name.clone(),
                        payload: e.payload.clone(),
                        tx_id: at.tx_id,
                        block_height: height,
                        channel_id: channel.clone(),
                    });
                }
            }
        }
    }
}

impl LedgerView for ChannelLedger {
    fn channel_id(&self) -> &str {
        self.store.channel_id()
    }

    fn state(&self) -> &WorldState {
        &self.state
    }

    fn key_history(&self, key: &str) -> &[TxRef] {
        self.history.get(key).map_or(&[], Vec::as_slice)
    }

    fn tx_record(&self, tx_id: &Digest) -> Option<&TxRecord> {
        self.txs.get(tx_id)
    }

    fn events(&self) -> &[CommittedEvent] {
        &self.events
    }
}
