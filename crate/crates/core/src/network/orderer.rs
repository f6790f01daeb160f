use std::collections::{BTreeMap, VecDeque};

use super::topology::{ChannelConfig, GOVERNANCE_CHANNEL};
use crate::digest::Digest;
use crate::ledger::{Block, TxEntry};

/// What the caller should do after a transaction is queued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enqueued {
    /// The batch is full; cut a block now.
    CutNow,
    /// First transaction of a batch; arm the timeout for this generation.
    StartTimer { generation: u64, timeout_ms: u64 },
    Waiting,
}

#[derive(Debug)]
struct ChannelQueue {
    config: ChannelConfig,
    members: Vec<String>,
    next_height: u64,
    tip: Digest,
    queue: VecDeque<TxEntry>,
    generation: u64,
    /// Blocks already cut, kept so a block every member lost can still be served.
    cut: Vec<Block>,
}

/// Single FIFO ordering service.
#[derive(Debug)]
pub struct Orderer {
    node_id: String,
    channels: BTreeMap<String, ChannelQueue>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OrdererError {
    #[error("UnknownChannel: {0}")]
    UnknownChannel(String),
    #[error("DuplicateChannel: {0}")]
    DuplicateChannel(String),
}

impl Orderer {
    pub fn new(node_id: &str) -> Self {
        Orderer { node_id: node_id.to_string(), channels: BTreeMap::new() }
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    /// Starts ordering `config` after the block `tip` at `next_height - 1`.
    pub fn open_channel(
        &mut self,
        config: ChannelConfig,
        members: Vec<String>,
        next_height: u64,
        tip: Digest,
    ) -> Result<(), OrdererError> {
        if self.channels.contains_key(&config.channel_id) {
            return Err(OrdererError::DuplicateChannel(config.channel_id));
        }
        self.channels.insert(
            config.channel_id.clone(),
            ChannelQueue { config, members, next_height, tip, queue: VecDeque::new(), generation: 0, cut: Vec::new() },
        );
        Ok(())
    }

    pub fn has_channel(&self, channel: &str) -> bool {
        self.channels.contains_key(channel)
    }

    pub fn channel_ids(&self) -> impl Iterator<Item = &str> {
        self.channels.keys().map(String::as_str)
    }

    pub fn members(&self, channel: &str) -> &[String] {
        self.channels.get(channel).map_or(&[], |c| c.members.as_slice())
    }

    pub fn config(&self, channel: &str) -> Option<&ChannelConfig> {
        self.channels.get(channel).map(|c| &c.config)
    }

    /// Height the next block of `channel` will get.
    pub fn next_height(&self, channel: &str) -> u64 {
        self.channels.get(channel).map_or(0, |c| c.next_height)
    }

    pub fn queue_len(&self, channel: &str) -> usize {
        self.channels.get(channel).map_or(0, |c| c.queue.len())
    }

    /// Height of the last governance block cut.
    pub fn governance_height(&self) -> u64 {
        self.next_height(GOVERNANCE_CHANNEL).saturating_sub(1)
    }

    /// Records a genesis block produced outside the queue.
    pub fn record_genesis(&mut self, block: &Block) -> Result<(), OrdererError> {
        let ch = &block.header.channel_id;
        let c = self.channels.get_mut(ch).ok_or_else(|| OrdererError::UnknownChannel(ch.clone()))?;
        c.next_height = block.height() + 1;
        c.tip = block.hash;
        c.cut.push(block.clone());
        Ok(())
    }

    pub fn enqueue(&mut self, entry: TxEntry) -> Result<Enqueued, OrdererError> {
        let ch = entry.envelope.channel_id.clone();
        let c = self.channels.get_mut(&ch).ok_or(OrdererError::UnknownChannel(ch))?;
        c.queue.push_back(entry);
        Ok(if c.queue.len() >= c.config.batch_max_tx {
            Enqueued::CutNow
        } else if c.queue.len() == 1 {
            c.generation += 1;
            Enqueued::StartTimer { generation: c.generation, timeout_ms: c.config.batch_timeout_ms }
        } else {
            Enqueued::Waiting
        })
    }

    /// True when the timer of `generation` is still the live one.
    pub fn timer_due(&self, channel: &str, generation: u64) -> bool {
        self.channels
            .get(channel)
            .is_some_and(|c| c.generation == generation && !c.queue.is_empty())
    }

    /// Cuts up to `batch_max_tx` queued transactions, FIFO, into a block
    /// linked to the channel tip. Also reports whether a new timer is needed
    /// for transactions left in the queue.
    pub fn cut_block(&mut self, channel: &str, created_at: u64) -> Option<(Block, Option<Enqueued>)> {
        let gov_height = self.governance_height();
        let c = self.channels.get_mut(channel)?;
        if c.queue.is_empty() {
            return None;
        }
        let n = c.queue.len().min(c.config.batch_max_tx);
        let txs: Vec<TxEntry> = c.queue.drain(..n).collect();
        let governance_height = if channel == GOVERNANCE_CHANNEL { c.next_height - 1 } else { gov_height };
        let block = Block::new(channel, c.next_height, c.tip, created_at, governance_height, txs)
            .expect("non-empty batch of canonicalizable entries");
        c.next_height += 1;
        c.tip = block.hash;
        c.cut.push(block.clone());
        c.generation += 1;
        let follow_up = (!c.queue.is_empty()).then_some(if c.queue.len() >= c.config.batch_max_tx {
            Enqueued::CutNow
        } else {
            Enqueued::StartTimer { generation: c.generation, timeout_ms: c.config.batch_timeout_ms }
        });
        Some((block, follow_up))
    }

    pub fn cached_block(&self, channel: &str, height: u64) -> Option<&Block> {
        let c = self.channels.get(channel)?;
        c.cut.iter().find(|b| b.height() == height)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::testutil::entry;
    use crate::ledger::ReadWriteSet;

    fn orderer(batch: usize) -> Orderer {
        let mut o = Orderer::new("o");
        let config = ChannelConfig {
            channel_id: "c".into(),
            member_orgs: [crate::identity::Org::Warehouse].into_iter().collect(),
            endorsement_policy: "any".into(),
            batch_max_tx: batch,
            batch_timeout_ms: 250,
        };
        o.open_channel(config, vec!["n1".into()], 1, Digest([9; 32])).unwrap();
        o
    }

    /// Drives the orderer with a simple clock: txs arrive 1 ms apart,
    /// timers fire at their deadline.
    #[test]
    fn twenty_five_txs_batch_ten_ten_five() {
        let mut o = orderer(10);
        let mut blocks = Vec::new();
        let mut timer = None;
        for i in 0..25u64 {
            match o.enqueue(entry("c", i, ReadWriteSet::default())).unwrap() {
                Enqueued::CutNow => blocks.push((o.cut_block("c", i).unwrap().0, "size")),
                Enqueued::StartTimer { generation, timeout_ms } => timer = Some((generation, i + timeout_ms)),
                Enqueued::Waiting => {}
            }
        }
        let (generation, at) = timer.unwrap();
        assert!(o.timer_due("c", generation));
        blocks.push((o.cut_block("c", at).unwrap().0, "timeout"));
        let sizes: Vec<_> = blocks.iter().map(|(b, why)| (b.transactions.len(), *why)).collect();
        assert_eq!(sizes, [(10, "size"), (10, "size"), (5, "timeout")]);
        assert_eq!(blocks.iter().map(|(b, _)| b.height()).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(blocks[1].0.header.prev_hash, blocks[0].0.hash);
        let nonces: Vec<u64> = blocks.iter().flat_map(|(b, _)| b.transactions.iter().map(|t| t.envelope.nonce)).collect();
        assert_eq!(nonces, (0..25).collect::<Vec<_>>());
    }

    #[test]
    fn stale_timer_is_ignored() {
        let mut o = orderer(2);
        let Enqueued::StartTimer { generation, .. } = o.enqueue(entry("c", 1, ReadWriteSet::default())).unwrap() else {
            panic!()
        };
        assert_eq!(o.enqueue(entry("c", 2, ReadWriteSet::default())).unwrap(), Enqueued::CutNow);
        o.cut_block("c", 5).unwrap();
        assert!(!o.timer_due("c", generation));
        assert!(o.cut_block("c", 6).is_none());
    }

    #[test]
    fn single_tx_cut_by_timeout() {
        let mut o = orderer(10);
        let Enqueued::StartTimer { generation, .. } = o.enqueue(entry("c", 1, ReadWriteSet::default())).unwrap() else {
            panic!()
        };
        assert!(o.timer_due("c", generation));
        let (b, follow) = o.cut_block("c", 250).unwrap();
        assert_eq!(b.transactions.len(), 1);
        assert!(follow.is_none());
    }
}
