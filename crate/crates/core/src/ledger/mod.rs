//! Hash-chained block store over a versioned world state.
//!
//! A block header commits to its predecessor through `prev_hash` and to its
//! transactions through `merkle_root`. The per-transaction validity flags are
//! written by each peer at commit time and are not part of the header digest;
//! they are a deterministic function of the chain and are re-derived by
//! [`verify_chain`].

mod channel;
mod state;
mod store;
mod validate;
mod verify;

use serde::{Deserialize, Serialize};

use crate::digest::{hash_bytes, merkle_root, Digest};
use crate::doc::{canonical_bytes, Doc, DocError};

pub use channel::{ChannelLedger, CommittedEvent, LedgerView, TxRecord, TxRef};
pub use state::{StateEntry, WorldState};
pub use store::{read_block_file, BlockFileWriter, BlockStore};
pub use validate::{validate_and_commit, TxVerifier};
pub use verify::{verify_chain, ChainAuditor, ChainReport};

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("block height {got} does not extend tip (expected {expected})")]
    BadHeight { expected: u64, got: u64 },
    #[error("block {height} prev_hash does not match tip digest")]
    BadPrevHash { height: u64 },
    #[error("block {height} merkle root does not match its transactions")]
    BadMerkleRoot { height: u64 },
    #[error("block {height} stored hash does not match its header")]
    BadBlockHash { height: u64 },
    #[error("block {height} belongs to channel {got}, store holds {expected}")]
    WrongChannel { height: u64, expected: String, got: String },
    #[error("block has no transactions")]
    EmptyBlock,
    #[error(transparent)]
    Doc(#[from] DocError),
    #[error("block file: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt block record at index {index}: {reason}")]
    Corrupt { index: usize, reason: String },
}

/// Position of the write that produced a state entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(u64, u32)", into = "(u64, u32)")]
pub struct Version {
    pub height: u64,
    pub tx_index: u32,
}

impl Version {
    pub fn new(height: u64, tx_index: u32) -> Self {
        Version { height, tx_index }
    }
}

impl From<(u64, u32)> for Version {
    fn from((height, tx_index): (u64, u32)) -> Self {
        Version { height, tx_index }
    }
}

impl From<Version> for (u64, u32) {
    fn from(v: Version) -> Self {
        (v.height, v.tx_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub scheme: String,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        if s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(serde::de::Error::custom("hex must be lowercase"));
        }
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// Borrowed view of the fields covered by an envelope's id and signature.
#[derive(Serialize)]
struct SigningView<'a> {
    channel_id: &'a str,
    contract_id: &'a str,
    operation: &'a str,
    args: &'a Doc,
    submitter: &'a str,
    nonce: u64,
    timestamp: u64,
}

/// An envelope before it is signed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeBody {
    pub channel_id: String,
    pub contract_id: String,
    pub operation: String,
    pub args: Doc,
    pub submitter: String,
    pub nonce: u64,
    pub timestamp: u64,
}

impl EnvelopeBody {
    fn view(&self) -> SigningView<'_> {
        SigningView {
            channel_id: &self.channel_id,
            contract_id: &self.contract_id,
            operation: &self.operation,
            args: &self.args,
            submitter: &self.submitter,
            nonce: self.nonce,
            timestamp: self.timestamp,
        }
    }

    pub fn signing_bytes(&self) -> Result<Vec<u8>, DocError> {
        canonical_bytes(&self.view())
    }

    pub fn tx_id(&self) -> Result<Digest, DocError> {
        Ok(hash_bytes(&self.signing_bytes()?))
    }

    pub fn seal(self, signature: Signature) -> Result<TransactionEnvelope, DocError> {
        Ok(TransactionEnvelope {
            tx_id: self.tx_id()?,
            channel_id: self.channel_id,
            contract_id: self.contract_id,
            operation: self.operation,
            args: self.args,
            submitter: self.submitter,
            nonce: self.nonce,
            timestamp: self.timestamp,
            signature,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionEnvelope {
    pub tx_id: Digest,
    pub channel_id: String,
    pub contract_id: String,
    pub operation: String,
    pub args: Doc,
    pub submitter: String,
    pub nonce: u64,
    pub timestamp: u64,
    pub signature: Signature,
}

impl TransactionEnvelope {
    fn view(&self) -> SigningView<'_> {
        SigningView {
            channel_id: &self.channel_id,
            contract_id: &self.contract_id,
            operation: &self.operation,
            args: &self.args,
            submitter: &self.submitter,
            nonce: self.nonce,
            timestamp: self.timestamp,
        }
    }

    /// Canonical bytes of everything but `tx_id` and `signature`.
    pub fn signing_bytes(&self) -> Result<Vec<u8>, DocError> {
        canonical_bytes(&self.view())
    }

    /// True when `tx_id` is the digest of the signed fields.
    pub fn id_matches(&self) -> bool {
        self.signing_bytes()
            .map(|b| hash_bytes(&b) == self.tx_id)
            .unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadEntry {
    pub key: String,
    pub version: Option<Version>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriteEntry {
    pub key: String,
    pub value: Doc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_name: String,
    pub payload: Doc,
}

/// Reads with the versions observed, writes, and events of one simulation.
///
/// `abort` carries the reason when the contract rejected the transaction; such
/// a set is still ordered so the rejection is recorded on the chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReadWriteSet {
    pub reads: Vec<ReadEntry>,
    pub writes: Vec<WriteEntry>,
    pub events: Vec<EventRecord>,
    pub abort: Option<String>,
}

impl ReadWriteSet {
    pub fn aborted(reason: impl Into<String>) -> Self {
        ReadWriteSet { abort: Some(reason.into()), ..Default::default() }
    }

    pub fn digest(&self) -> Result<Digest, DocError> {
        Ok(hash_bytes(&canonical_bytes(self)?))
    }

    /// Checks that no key repeats within reads or within writes.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        if !self.reads.iter().all(|r| seen.insert(r.key.as_str())) {
            return false;
        }
        seen.clear();
        self.writes.iter().all(|w| seen.insert(w.key.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endorsement {
    pub node_id: String,
    pub org: String,
    pub rwset_digest: Digest,
    pub signature: Signature,
}

/// One ordered transaction: the envelope, its simulated effects, and the
/// endorsements collected for them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxEntry {
    pub envelope: TransactionEnvelope,
    pub rwset: ReadWriteSet,
    pub endorsements: Vec<Endorsement>,
}

impl TxEntry {
    pub fn digest(&self) -> Result<Digest, DocError> {
        Ok(hash_bytes(&canonical_bytes(self)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxValidation {
    pub valid: bool,
    pub reason: Option<String>,
}

impl TxValidation {
    pub fn valid() -> Self {
        TxValidation { valid: true, reason: None }
    }

    pub fn invalid(reason: impl Into<String>) -> Self {
        TxValidation { valid: false, reason: Some(reason.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub channel_id: String,
    pub height: u64,
    pub prev_hash: Digest,
    pub merkle_root: Digest,
    pub created_at: u64,
    /// Governance-channel height whose membership view validates this block.
    pub governance_height: u64,
}

impl BlockHeader {
    pub fn digest(&self) -> Result<Digest, DocError> {
        Ok(hash_bytes(&canonical_bytes(self)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub hash: Digest,
    pub transactions: Vec<TxEntry>,
    /// Empty until a peer commits the block.
    pub validation: Vec<TxValidation>,
}

impl Block {
    /// Seals a new block over `transactions`.
    pub fn new(
        channel_id: &str,
        height: u64,
        prev_hash: Digest,
        created_at: u64,
        governance_height: u64,
        transactions: Vec<TxEntry>,
    ) -> Result<Block, LedgerError> {
        let merkle_root = Self::compute_merkle_root(&transactions)?;
        let header = BlockHeader {
            channel_id: channel_id.to_string(),
            height,
            prev_hash,
            merkle_root,
            created_at,
            governance_height,
        };
        let hash = header.digest()?;
        Ok(Block { header, hash, transactions, validation: Vec::new() })
    }

    pub fn compute_merkle_root(transactions: &[TxEntry]) -> Result<Digest, LedgerError> {
        let leaves = transactions
            .iter()
            .map(TxEntry::digest)
            .collect::<Result<Vec<_>, _>>()?;
        merkle_root(&leaves).map_err(|_| LedgerError::EmptyBlock)
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }

    /// Checks the stored hash and Merkle root against the block's contents.
    pub fn check_integrity(&self) -> Result<(), LedgerError> {
        let height = self.header.height;
        if self.header.digest()? != self.hash {
            return Err(LedgerError::BadBlockHash { height });
        }
        if Self::compute_merkle_root(&self.transactions)? != self.header.merkle_root {
            return Err(LedgerError::BadMerkleRoot { height });
        }
        Ok(())
    }

    pub fn to_canonical(&self) -> Result<Vec<u8>, DocError> {
        canonical_bytes(self)
    }

    /// Events of valid transactions, in transaction order.
    pub fn committed_events(&self) -> impl Iterator<Item = (usize, &TxEntry, &EventRecord)> {
        self.transactions
            .iter()
            .enumerate()
            .filter(|(i, _)| self.validation.get(*i).is_some_and(|v| v.valid))
            .flat_map(|(i, tx)| tx.rwset.events.iter().map(move |e| (i, tx, e)))
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Unsigned entry, enough for store and MVCC tests that use a permissive verifier.
    pub fn entry(channel: &str, nonce: u64, rwset: ReadWriteSet) -> TxEntry {
        let body = EnvelopeBody {
            channel_id: channel.to_string(),
            contract_id: "test".into(),
            operation: "op".into(),
            args: Doc::map(),
            submitter: "tester".into(),
            nonce,
            timestamp: 1_000 + nonce,
        };
        TxEntry {
            envelope: body
                .seal(Signature { scheme: "none".into(), bytes: vec![] })
                .unwrap(),
            rwset,
            endorsements: vec![],
        }
    }

    pub fn write(key: &str, value: impl Into<Doc>) -> WriteEntry {
        WriteEntry { key: key.to_string(), value: value.into() }
    }

    pub fn read(key: &str, version: Option<Version>) -> ReadEntry {
        ReadEntry { key: key.to_string(), version }
    }

    pub struct AcceptAll;

    impl TxVerifier for AcceptAll {
        fn verify(&self, _header: &BlockHeader, _entry: &TxEntry) -> Result<(), String> {
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn version_serializes_as_pair() {
        let d = Doc::from_serialize(&Version::new(7, 2)).unwrap();
        assert_eq!(d.to_string(), "[7,2]");
    }

    #[test]
    fn envelope_id_excludes_signature() {
        let mut tx = entry("c", 1, ReadWriteSet::default());
        assert!(tx.envelope.id_matches());
        tx.envelope.signature.bytes = vec![1, 2, 3];
        assert!(tx.envelope.id_matches());
        tx.envelope.nonce = 2;
        assert!(!tx.envelope.id_matches());
    }

    #[test]
    fn rwset_duplicate_keys_detected() {
        let mut rw = ReadWriteSet {
            writes: vec![write("a", 1i64), write("b", 2i64)],
            ..Default::default()
        };
        assert!(rw.is_well_formed());
        rw.writes.push(write("a", 3i64));
        assert!(!rw.is_well_formed());
    }

    #[test]
    fn block_integrity_detects_header_edit() {
        let mut b = Block::new("c", 1, Digest::ZERO, 5, 0, vec![entry("c", 1, Default::default())])
            .unwrap();
        assert!(b.check_integrity().is_ok());
        b.header.created_at += 1;
        assert!(matches!(b.check_integrity(), Err(LedgerError::BadBlockHash { height: 1 })));
    }
}
