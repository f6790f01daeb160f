use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Version, WriteEntry};
use crate::digest::{hash_bytes, Digest};
use crate::doc::{canonicalize, Doc, DocError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEntry {
    pub value: Doc,
    pub version: Version,
}

/// Versioned key-value state of one channel.
#[derive(Debug, Clone, Default)]
pub struct WorldState {
    entries: BTreeMap<String, StateEntry>,
    // Every tx id seen in a committed block, valid or not. Derived from the
    // chain, so it stays out of the state hash.
    seen_txs: HashSet<Digest>,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&StateEntry> {
        self.entries.get(key)
    }

    pub fn version(&self, key: &str) -> Option<Version> {
        self.entries.get(key).map(|e| e.version)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &StateEntry)> {
        self.entries.iter()
    }

    /// Entries whose key starts with `prefix`, in key order.
    pub fn scan_prefix<'a>(
        &'a self,
        prefix: &'a str,
    ) -> impl Iterator<Item = (&'a String, &'a StateEntry)> + 'a {
        self.entries
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
    }

    pub(crate) fn apply(&mut self, writes: &[WriteEntry], version: Version) {
        for w in writes {
            self.entries
                .insert(w.key.clone(), StateEntry { value: w.value.clone(), version });
        }
    }

    pub(crate) fn mark_seen(&mut self, tx_id: Digest) -> bool {
        self.seen_txs.insert(tx_id)
    }

    pub fn has_seen(&self, tx_id: &Digest) -> bool {
        self.seen_txs.contains(tx_id)
    }

    /// Snapshot export: `{key: {value, version}}` with keys sorted.
    pub fn export(&self) -> Doc {
        let mut m = BTreeMap::new();
        for (k, e) in &self.entries {
            let version = Doc::List(vec![
                Doc::from(e.version.height),
                Doc::Int(i64::from(e.version.tx_index)),
            ]);
            m.insert(
                k.clone(),
                Doc::map().with("value", e.value.clone()).with("version", version),
            );
        }
        Doc::Map(m)
    }

    pub fn export_canonical(&self) -> Result<Vec<u8>, DocError> {
        canonicalize(&self.export())
    }

    pub fn state_hash(&self) -> Digest {
        // Every value in the map was accepted by canonicalize when its
        // block was sealed.
        hash_bytes(&self.export_canonical().expect("committed values are canonicalizable"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::testutil::write;

    #[test]
    fn state_hash_independent_of_insertion_order() {
        let mut a = WorldState::new();
        a.apply(&[write("x", 1i64)], Version::new(1, 0));
        a.apply(&[write("y", 2i64)], Version::new(1, 1));
        let mut b = WorldState::new();
        b.apply(&[write("y", 2i64)], Version::new(1, 1));
        b.apply(&[write("x", 1i64)], Version::new(1, 0));
        assert_eq!(a.state_hash(), b.state_hash());
    }

    #[test]
    fn state_hash_covers_versions() {
        let mut a = WorldState::new();
        a.apply(&[write("x", 1i64)], Version::new(1, 0));
        let mut b = WorldState::new();
        b.apply(&[write("x", 1i64)], Version::new(2, 0));
        assert_ne!(a.state_hash(), b.state_hash());
    }

    #[test]
    fn export_shape() {
        let mut s = WorldState::new();
        s.apply(&[write("k", "v")], Version::new(3, 1));
        assert_eq!(s.export().to_string(), r#"{"k":{"value":"v","version":[3,1]}}"#);
    }

    #[test]
    fn prefix_scan() {
        let mut s = WorldState::new();
        s.apply(
            &[write("a#1", 1i64), write("a#2", 2i64), write("b#1", 3i64), write("a", 0i64)],
            Version::new(1, 0),
        );
        let keys: Vec<_> = s.scan_prefix("a#").map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, ["a#1", "a#2"]);
    }
}
