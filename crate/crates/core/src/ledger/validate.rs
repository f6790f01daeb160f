use super::{Block, BlockHeader, TxEntry, TxValidation, Version, WorldState};

/// Identity, access-control and endorsement rules applied at commit.
///
/// Implementations must be deterministic in `(header, entry)`; every peer
/// reaches the same flags only if they agree on this check.
pub trait TxVerifier {
    fn verify(&self, header: &BlockHeader, entry: &TxEntry) -> Result<(), String>;
}

impl<T: TxVerifier + ?Sized> TxVerifier for &T {
    fn verify(&self, header: &BlockHeader, entry: &TxEntry) -> Result<(), String> {
        (**self).verify(header, entry)
    }
}

/// Applies a block's transactions in order and returns one flag per transaction.
///
/// A transaction is valid when its envelope is intact, `verifier` accepts
/// it, its simulation did not abort, and every key it read still carries the
/// version it observed. Invalid transactions write nothing. The genesis
/// block is configuration and is accepted as-is.
pub fn validate_and_commit(
    state: &mut WorldState,
    block: &Block,
    verifier: &dyn TxVerifier,
) -> Vec<TxValidation> {
    let height = block.height();
    let mut flags = Vec::with_capacity(block.transactions.len());
    for (index, entry) in block.transactions.iter().enumerate() {
        let first_sighting = state.mark_seen(entry.envelope.tx_id);
        let outcome = if height == 0 {
            Ok(())
        } else {
            check_tx(state, &block.header, entry, verifier, first_sighting)
        };
        match outcome {
            Ok(()) => {
                state.apply(&entry.rwset.writes, Version::new(height, index as u32));
                flags.push(TxValidation::valid());
            }
            Err(reason) => flags.push(TxValidation::invalid(reason)),
        }
    }
    flags
}

fn check_tx(
    state: &WorldState,
    header: &BlockHeader,
    entry: &TxEntry,
    verifier: &dyn TxVerifier,
    first_sighting: bool,
) -> Result<(), String> {
    let env = &entry.envelope;
    if !env.id_matches() {
        return Err("tx_id does not match envelope".into());
    }
    if env.channel_id != header.channel_id {
        return Err(format!("envelope targets channel {}", env.channel_id));
    }
    if !first_sighting {
        return Err("duplicate transaction id".into());
    }
    if !entry.rwset.is_well_formed() {
        return Err("read-write set repeats a key".into());
    }
    verifier.verify(header, entry)?;
    if let Some(reason) = &entry.rwset.abort {
        return Err(format!("contract abort: {reason}"));
    }
    for read in &entry.rwset.reads {
        if state.version(&read.key) != read.version {
            return Err(format!("mvcc conflict on key {}", read.key));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::Digest;
    use crate::doc::Doc;
    use crate::ledger::testutil::*;
    use crate::ledger::{BlockStore, ReadWriteSet};

    fn commit(
        store: &mut BlockStore,
        state: &mut WorldState,
        txs: Vec<TxEntry>,
    ) -> Vec<TxValidation> {
        let mut block = Block::new(
            store.channel_id(),
            store.next_height(),
            store.tip_digest(),
            store.next_height(),
            0,
            txs,
        )
        .unwrap();
        let flags = validate_and_commit(state, &block, &AcceptAll);
        block.validation = flags.clone();
        store.append_block(block).unwrap();
        flags
    }

    fn seeded() -> (BlockStore, WorldState) {
        let mut store = BlockStore::in_memory("c");
        let mut state = WorldState::new();
        let genesis = ReadWriteSet { writes: vec![write("K", 0i64)], ..Default::default() };
        commit(&mut store, &mut state, vec![entry("c", 0, genesis)]);
        (store, state)
    }

    fn update_k(nonce: u64, observed: Option<Version>, value: i64) -> TxEntry {
        entry(
            "c",
            nonce,
            ReadWriteSet {
                reads: vec![read("K", observed)],
                writes: vec![write("K", value)],
                ..Default::default()
            },
        )
    }

    /// Independent replay: apply transactions one at a time, accepting only
    /// those whose reads match the versions in a plain map.
    fn oracle(
        initial: &[(String, Version)],
        height: u64,
        txs: &[TxEntry],
    ) -> Vec<bool> {
        let mut versions: std::collections::HashMap<String, Version> =
            initial.iter().cloned().collect();
        txs.iter()
            .enumerate()
            .map(|(i, tx)| {
                let ok = tx.rwset.reads.iter().all(|r| versions.get(&r.key).copied() == r.version);
                if ok {
                    for w in &tx.rwset.writes {
                        versions.insert(w.key.clone(), Version::new(height, i as u32));
                    }
                }
                ok
            })
            .collect()
    }

    #[test]
    fn conflicting_updates_first_wins_in_either_order() {
        for swap in [false, true] {
            let (mut store, mut state) = seeded();
            let v = state.version("K");
            let mut txs = vec![update_k(1, v, 10), update_k(2, v, 20)];
            if swap {
                txs.reverse();
            }
            let expected = oracle(&[("K".into(), v.unwrap())], 1, &txs);
            let winner_value = txs[0].rwset.writes[0].value.clone();
            let flags = commit(&mut store, &mut state, txs);
            assert_eq!(flags.iter().map(|f| f.valid).collect::<Vec<_>>(), expected);
            assert_eq!(expected, [true, false]);
            assert!(flags[1].reason.as_deref().unwrap().starts_with("mvcc conflict"));
            assert_eq!(state.get("K").unwrap().value, winner_value);
            assert_eq!(state.version("K"), Some(Version::new(1, 0)));
        }
    }

    #[test]
    fn empty_read_set_always_valid() {
        let (mut store, mut state) = seeded();
        let blind = |n| {
            entry("c", n, ReadWriteSet { writes: vec![write("K", n as i64)], ..Default::default() })
        };
        let flags = commit(&mut store, &mut state, vec![blind(1), blind(2), blind(3)]);
        assert!(flags.iter().all(|f| f.valid));
        assert_eq!(state.version("K"), Some(Version::new(1, 2)));
    }

    #[test]
    fn absent_key_read_conflicts_with_insert() {
        let (mut store, mut state) = seeded();
        let insert = |n| {
            entry(
                "c",
                n,
                ReadWriteSet {
                    reads: vec![read("new", None)],
                    writes: vec![write("new", Doc::Bool(true))],
                    ..Default::default()
                },
            )
        };
        let flags = commit(&mut store, &mut state, vec![insert(1), insert(2)]);
        assert_eq!(flags.iter().map(|f| f.valid).collect::<Vec<_>>(), [true, false]);
    }

    #[test]
    fn abort_and_duplicate_are_invalid() {
        let (mut store, mut state) = seeded();
        let aborted = entry("c", 1, ReadWriteSet::aborted("asset not found"));
        let ok = update_k(2, state.version("K"), 5);
        let flags = commit(&mut store, &mut state, vec![aborted, ok.clone(), ok]);
        assert_eq!(flags[0].reason.as_deref(), Some("contract abort: asset not found"));
        assert!(flags[1].valid);
        assert_eq!(flags[2].reason.as_deref(), Some("duplicate transaction id"));
    }

    #[test]
    fn tampered_envelope_invalid() {
        let (mut store, mut state) = seeded();
        let mut tx = update_k(1, state.version("K"), 5);
        tx.envelope.tx_id = Digest([1; 32]);
        let flags = commit(&mut store, &mut state, vec![tx]);
        assert!(!flags[0].valid);
    }

    #[test]
    fn verifier_rejection_recorded() {
        struct DenyAll;
        impl TxVerifier for DenyAll {
            fn verify(&self, _: &BlockHeader, _: &TxEntry) -> Result<(), String> {
                Err("policy not met".into())
            }
        }
        let (store, mut state) = seeded();
        let block = Block::new("c", 1, store.tip_digest(), 1, 0, vec![update_k(1, None, 1)]).unwrap();
        let flags = validate_and_commit(&mut state, &block, &DenyAll);
        assert_eq!(flags[0].reason.as_deref(), Some("policy not met"));
    }

    #[test]
    fn replay_matches_live_commit() {
        let (mut store, mut state) = seeded();
        for n in 1..40u64 {
            let v = state.version("K");
            // Every third block carries a stale read that must lose.
            let stale = if n % 3 == 0 { None } else { v };
            let other = entry(
                "c",
                1000 + n,
                ReadWriteSet { writes: vec![write(&format!("k{n}"), n as i64)], ..Default::default() },
            );
            commit(&mut store, &mut state, vec![update_k(n, stale, n as i64), other]);
        }
        let mut replayed = WorldState::new();
        for b in store.blocks() {
            let flags = validate_and_commit(&mut replayed, b, &AcceptAll);
            assert_eq!(flags, b.validation);
        }
        assert_eq!(replayed.state_hash(), state.state_hash());
    }
}
