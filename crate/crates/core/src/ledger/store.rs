use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::{Block, LedgerError};
use crate::digest::Digest;
use crate::doc::parse;

/// Appends `<u32 big-endian length><canonical block bytes>` records.
#[derive(Debug)]
pub struct BlockFileWriter {
    out: BufWriter<File>,
}

impl BlockFileWriter {
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(BlockFileWriter { out: BufWriter::new(file) })
    }

    pub fn append(&mut self, block: &Block) -> Result<(), LedgerError> {
        let bytes = block.to_canonical()?;
        let len = u32::try_from(bytes.len()).map_err(|_| LedgerError::Corrupt {
            index: block.height() as usize,
            reason: "block exceeds 4 GiB".into(),
        })?;
        self.out.write_all(&len.to_be_bytes())?;
        self.out.write_all(&bytes)?;
        self.out.flush()?;
        Ok(())
    }
}

/// Splits a block file into raw records without interpreting them.
pub fn read_block_file(path: &Path) -> Result<Vec<Vec<u8>>, LedgerError> {
    let mut data = Vec::new();
    File::open(path)?.read_to_end(&mut data)?;
    split_records(&data)
}

pub(crate) fn split_records(mut data: &[u8]) -> Result<Vec<Vec<u8>>, LedgerError> {
    let mut records = Vec::new();
    while !data.is_empty() {
        let index = records.len();
        if data.len() < 4 {
            return Err(LedgerError::Corrupt { index, reason: "truncated length prefix".into() });
        }
        let len = u32::from_be_bytes([data[0], data[1], data[2], data[3]]) as usize;
        data = &data[4..];
        if data.len() < len {
            return Err(LedgerError::Corrupt { index, reason: "truncated record".into() });
        }
        records.push(data[..len].to_vec());
        data = &data[len..];
    }
    Ok(records)
}

/// Decodes one record, requiring the stored bytes to be exactly canonical.
pub(crate) fn decode_record(index: usize, bytes: &[u8]) -> Result<Block, LedgerError> {
    let corrupt = |reason: String| LedgerError::Corrupt { index, reason };
    let doc = parse(bytes).map_err(|e| corrupt(e.to_string()))?;
    let block: Block = doc.to_typed().map_err(|e| corrupt(e.to_string()))?;
    let again = block.to_canonical().map_err(|e| corrupt(e.to_string()))?;
    if again != bytes {
        return Err(corrupt("record is not in canonical form".into()));
    }
    Ok(block)
}

/// Append-only block chain of one channel, optionally mirrored to a file.
#[derive(Debug)]
pub struct BlockStore {
    channel_id: String,
    blocks: Vec<Arc<Block>>,
    file: Option<BlockFileWriter>,
}

impl BlockStore {
    pub fn in_memory(channel_id: &str) -> Self {
        BlockStore { channel_id: channel_id.to_string(), blocks: Vec::new(), file: None }
    }

    /// Opens a persisted store, loading and integrity-checking existing records.
    pub fn open(channel_id: &str, path: &Path) -> Result<Self, LedgerError> {
        let mut store = Self::in_memory(channel_id);
        if path.exists() {
            for (i, rec) in read_block_file(path)?.iter().enumerate() {
                let block = decode_record(i, rec)?;
                store.check_append(&block)?;
                store.blocks.push(Arc::new(block));
            }
        }
        store.file = Some(BlockFileWriter::open(path)?);
        Ok(store)
    }

    pub fn attach_writer(&mut self, writer: BlockFileWriter) {
        self.file = Some(writer);
    }

    pub fn channel_id(&self) -> &str {
        &self.channel_id
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn tip(&self) -> Option<&Arc<Block>> {
        self.blocks.last()
    }

    pub fn tip_height(&self) -> Option<u64> {
        self.tip().map(|b| b.height())
    }

    /// Digest of the tip header, or all zeros for an empty store.
    pub fn tip_digest(&self) -> Digest {
        self.tip().map_or(Digest::ZERO, |b| b.hash)
    }

    pub fn next_height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn get(&self, height: u64) -> Option<&Arc<Block>> {
        self.blocks.get(usize::try_from(height).ok()?)
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.blocks
    }

    /// Checks that `block` extends the tip and is internally consistent.
    pub fn check_append(&self, block: &Block) -> Result<(), LedgerError> {
        let height = block.height();
        if block.header.channel_id != self.channel_id {
            return Err(LedgerError::WrongChannel {
                height,
                expected: self.channel_id.clone(),
                got: block.header.channel_id.clone(),
            });
        }
        if height != self.next_height() {
            return Err(LedgerError::BadHeight { expected: self.next_height(), got: height });
        }
        if block.header.prev_hash != self.tip_digest() {
            return Err(LedgerError::BadPrevHash { height });
        }
        block.check_integrity()
    }

    pub fn append_block(&mut self, block: Block) -> Result<Arc<Block>, LedgerError> {
        self.check_append(&block)?;
        if let Some(file) = &mut self.file {
            file.append(&block)?;
        }
        let block = Arc::new(block);
        self.blocks.push(block.clone());
        Ok(block)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::testutil::*;
    use crate::ledger::ReadWriteSet;

    fn next_block(store: &BlockStore, nonce: u64) -> Block {
        Block::new(
            store.channel_id(),
            store.next_height(),
            store.tip_digest(),
            nonce,
            0,
            vec![entry(store.channel_id(), nonce, ReadWriteSet::default())],
        )
        .unwrap()
    }

    #[test]
    fn genesis_onto_empty_store() {
        let mut store = BlockStore::in_memory("c");
        let g = next_block(&store, 0);
        assert_eq!(g.header.prev_hash, Digest::ZERO);
        store.append_block(g.clone()).unwrap();
        assert_eq!(store.tip_height(), Some(0));
        assert_eq!(store.tip_digest(), g.hash);
    }

    #[test]
    fn bad_prev_hash_rejected() {
        let mut store = BlockStore::in_memory("c");
        store.append_block(next_block(&store, 0)).unwrap();
        let b = Block::new("c", 1, Digest([9; 32]), 1, 0, vec![entry("c", 1, Default::default())])
            .unwrap();
        assert!(matches!(store.append_block(b), Err(LedgerError::BadPrevHash { height: 1 })));
    }

    #[test]
    fn bad_height_rejected() {
        let mut store = BlockStore::in_memory("c");
        store.append_block(next_block(&store, 0)).unwrap();
        let b = Block::new("c", 5, store.tip_digest(), 1, 0, vec![entry("c", 1, Default::default())])
            .unwrap();
        assert!(matches!(
            store.append_block(b),
            Err(LedgerError::BadHeight { expected: 1, got: 5 })
        ));
    }

    #[test]
    fn earlier_digests_unchanged_by_append() {
        let mut store = BlockStore::in_memory("c");
        let mut seen = Vec::new();
        for n in 0..20 {
            store.append_block(next_block(&store, n)).unwrap();
            let digests: Vec<_> = store.blocks().iter().map(|b| b.header.digest().unwrap()).collect();
            assert_eq!(&digests[..seen.len()], &seen[..]);
            seen = digests;
        }
    }

    #[test]
    fn file_round_trip_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.blocks");
        {
            let mut store = BlockStore::open("c", &path).unwrap();
            for n in 0..3 {
                store.append_block(next_block(&store, n)).unwrap();
            }
        }
        let mut store = BlockStore::open("c", &path).unwrap();
        assert_eq!(store.len(), 3);
        store.append_block(next_block(&store, 3)).unwrap();
        assert_eq!(read_block_file(&path).unwrap().len(), 4);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let mut bytes = 10u32.to_be_bytes().to_vec();
        bytes.extend_from_slice(b"{}");
        assert!(matches!(split_records(&bytes), Err(LedgerError::Corrupt { index: 0, .. })));
        assert!(matches!(split_records(&[0, 0]), Err(LedgerError::Corrupt { .. })));
    }

    #[test]
    fn non_canonical_record_rejected() {
        let store = BlockStore::in_memory("c");
        let b = next_block(&store, 0);
        let mut text = String::from_utf8(b.to_canonical().unwrap()).unwrap();
        assert!(decode_record(0, text.as_bytes()).is_ok());
        text.insert(1, ' ');
        assert!(decode_record(0, text.as_bytes()).is_err());
    }
}
