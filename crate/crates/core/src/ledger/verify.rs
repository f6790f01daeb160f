use serde::Serialize;

use super::store::decode_record;
use super::{validate_and_commit, Block, BlockHeader, TxEntry, TxVerifier, WorldState};
use crate::digest::Digest;

/// Channel-specific checks that the structural audit cannot do on its own.
pub trait ChainAuditor {
    /// Verifies the envelope signature against the submitter's registered key.
    fn check_signature(&self, header: &BlockHeader, entry: &TxEntry) -> Result<(), String>;

    /// Rules used to recompute validity flags.
    fn verifier(&self) -> &dyn TxVerifier;

    /// Observes each block once it has been re-validated.
    fn block_verified(&mut self, _block: &Block, _state: &WorldState) {}
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainReport {
    Intact {
        blocks: u64,
        tip: Digest,
        state_hash: Digest,
    },
    Broken {
        height: u64,
        tx_id: Option<Digest>,
        reason: String,
    },
}

impl ChainReport {
    pub fn is_intact(&self) -> bool {
        matches!(self, ChainReport::Intact { .. })
    }

    pub fn failed_height(&self) -> Option<u64> {
        match self {
            ChainReport::Broken { height, .. } => Some(*height),
            ChainReport::Intact { .. } => None,
        }
    }
}

fn broken(height: u64, tx_id: Option<Digest>, reason: impl Into<String>) -> ChainReport {
    ChainReport::Broken { height, tx_id, reason: reason.into() }
}

/// Audits the raw bytes of a block file.
///
/// Recomputes every record's canonical form, header hash, link to the
/// previous block, Merkle root, tx ids, and envelope signatures, then replays
/// validation to confirm the stored validity flags. Stops at the first
/// failing height.
pub fn verify_chain(file: &[u8], channel_id: &str, auditor: &mut dyn ChainAuditor) -> ChainReport {
    let mut state = WorldState::new();
    let mut prev = Digest::ZERO;
    let mut rest = file;
    let mut height = 0u64;
    while !rest.is_empty() {
        if rest.len() < 4 {
            return broken(height, None, "truncated length prefix");
        }
        let len = u32::from_be_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        if rest.len() - 4 < len {
            return broken(height, None, "truncated record");
        }
        let record = &rest[4..4 + len];
        rest = &rest[4 + len..];

        let block = match decode_record(height as usize, record) {
            Ok(b) => b,
            Err(e) => return broken(height, None, e.to_string()),
        };
        if let Err(report) = check_block(&block, height, channel_id, prev, auditor) {
            return report;
        }
        let flags = validate_and_commit(&mut state, &block, auditor.verifier());
        if flags != block.validation {
            let first = flags
                .iter()
                .zip(&block.validation)
                .position(|(a, b)| a != b)
                .and_then(|i| block.transactions.get(i))
                .map(|tx| tx.envelope.tx_id);
            return broken(height, first, "stored validity flags disagree with replay");
        }
        auditor.block_verified(&block, &state);
        prev = block.hash;
        height += 1;
    }
    ChainReport::Intact { blocks: height, tip: prev, state_hash: state.state_hash() }
}

fn check_block(
    block: &Block,
    height: u64,
    channel_id: &str,
    prev: Digest,
    auditor: &dyn ChainAuditor,
) -> Result<(), ChainReport> {
    let h = &block.header;
    if h.height != height {
        return Err(broken(height, None, format!("record claims height {}", h.height)));
    }
    if h.channel_id != channel_id {
        return Err(broken(height, None, format!("record belongs to channel {}", h.channel_id)));
    }
    if h.prev_hash != prev {
        return Err(broken(height, None, "prev_hash does not link to previous block"));
    }
    if let Err(e) = block.check_integrity() {
        return Err(broken(height, None, e.to_string()));
    }
    for tx in &block.transactions {
        let id = Some(tx.envelope.tx_id);
        if !tx.envelope.id_matches() {
            return Err(broken(height, id, "tx_id does not match envelope"));
        }
        if let Err(reason) = auditor.check_signature(h, tx) {
            return Err(broken(height, id, format!("signature check failed: {reason}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::testutil::*;
    use crate::ledger::{BlockStore, ReadWriteSet};

    struct Permissive;

    impl ChainAuditor for Permissive {
        fn check_signature(&self, _: &BlockHeader, entry: &TxEntry) -> Result<(), String> {
            // Test envelopes carry an empty signature; anything else is "forged".
            if entry.envelope.signature.bytes.is_empty() {
                Ok(())
            } else {
                Err("unknown signature".into())
            }
        }

        fn verifier(&self) -> &dyn TxVerifier {
            &AcceptAll
        }
    }

    fn chain(n: u64) -> (Vec<u8>, BlockStore) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.blocks");
        let mut store = BlockStore::open("c", &path).unwrap();
        let mut state = WorldState::new();
        for h in 0..n {
            let rw = ReadWriteSet {
                reads: if h == 0 { vec![] } else { vec![read("K", state.version("K"))] },
                writes: vec![write("K", h as i64)],
                ..Default::default()
            };
            let mut b = Block::new("c", h, store.tip_digest(), 1000 + h, 0, vec![entry("c", h, rw)])
                .unwrap();
            b.validation = validate_and_commit(&mut state, &b, &AcceptAll);
            store.append_block(b).unwrap();
        }
        (std::fs::read(&path).unwrap(), store)
    }

    #[test]
    fn untampered_chain_is_intact() {
        let (bytes, store) = chain(50);
        let report = verify_chain(&bytes, "c", &mut Permissive);
        match report {
            ChainReport::Intact { blocks, tip, .. } => {
                assert_eq!(blocks, 50);
                assert_eq!(tip, store.tip_digest());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_hundred_appends_verify() {
        let (bytes, store) = chain(101);
        assert_eq!(store.tip_height(), Some(100));
        assert!(verify_chain(&bytes, "c", &mut Permissive).is_intact());
    }

    fn record_offsets(bytes: &[u8]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            out.push((pos, pos + 4 + len));
            pos += 4 + len;
        }
        out
    }

    #[test]
    fn flipped_arg_byte_fails_at_that_height() {
        let (mut bytes, _) = chain(50);
        let (start, end) = record_offsets(&bytes)[7];
        let text = String::from_utf8_lossy(&bytes[start + 4..end]).to_string();
        let pos = start + 4 + text.find("\"operation\":\"op\"").unwrap() + 14;
        bytes[pos] = b'x';
        let report = verify_chain(&bytes, "c", &mut Permissive);
        assert_eq!(report.failed_height(), Some(7), "{report:?}");
    }

    #[test]
    fn replaced_signature_names_tx() {
        let (_, store) = chain(10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.blocks");
        let mut writer = crate::ledger::BlockFileWriter::open(&path).unwrap();
        let mut victim = None;
        for b in store.blocks() {
            let mut b = (**b).clone();
            if b.height() == 4 {
                b.transactions[0].envelope.signature.bytes = vec![0xab; 64];
                // Keep header and Merkle root consistent so only the signature is wrong.
                b.header.merkle_root = Block::compute_merkle_root(&b.transactions).unwrap();
                b.hash = b.header.digest().unwrap();
                victim = Some(b.transactions[0].envelope.tx_id);
            }
            writer.append(&b).unwrap();
        }
        drop(writer);
        let bytes = std::fs::read(&path).unwrap();
        match verify_chain(&bytes, "c", &mut Permissive) {
            ChainReport::Broken { height, tx_id, .. } => {
                assert_eq!(height, 4);
                assert_eq!(tx_id, victim);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_single_byte_flip_detected_at_or_before_its_block() {
        let (bytes, _) = chain(6);
        let offsets = record_offsets(&bytes);
        for pos in 0..bytes.len() {
            let height = offsets.iter().position(|(s, e)| pos >= *s && pos < *e).unwrap() as u64;
            let mut tampered = bytes.clone();
            tampered[pos] ^= 0x01;
            let report = verify_chain(&tampered, "c", &mut Permissive);
            let failed = report.failed_height();
            assert!(
                failed.is_some_and(|h| h <= height),
                "flip at {pos} (block {height}) gave {report:?}"
            );
        }
    }
}
