//! Deterministic contract execution.
//!
//! Contracts are compiled-in procedures registered with an [`Engine`] by id.
//! They see the world only through a [`TxContext`] over a committed snapshot,
//! which records every read with the version observed and buffers writes and
//! events into a [`ReadWriteSet`]. No clock, randomness, or I/O is reachable
//! from contract code; the envelope timestamp is the only notion of time.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::digest::{hash_bytes, Digest};
use crate::doc::{canonical_bytes, Doc};
use crate::identity::{AccessControlList, Decision, Role};
use crate::ledger::{
    EventRecord, ReadEntry, ReadWriteSet, TransactionEnvelope, Version, WorldState, WriteEntry,
};

/// Contract id of the built-in deployment contract.
pub const LIFECYCLE: &str = "lifecycle";

/// A contract rejected the transaction. The message is kept on the chain.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ContractAbort(pub String);

impl ContractAbort {
    pub fn new(msg: impl Into<String>) -> Self {
        ContractAbort(msg.into())
    }

    pub fn bad_args(err: impl std::fmt::Display) -> Self {
        ContractAbort(format!("bad arguments: {err}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvokeError {
    #[error("unknown contract {0}")]
    UnknownContract(String),
    #[error("unknown operation {contract_id}.{operation}")]
    UnknownOperation { contract_id: String, operation: String },
    #[error("access denied for role {role} on {contract_id}.{operation}")]
    AclDenied { role: Role, contract_id: String, operation: String },
    #[error("contract abort: {0}")]
    ContractAbort(String),
}

/// Deployment manifest of a contract on one channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractDefinition {
    pub contract_id: String,
    pub version: u32,
    pub operations: Vec<String>,
    pub endorsement_policy_ref: String,
}

impl ContractDefinition {
    pub fn manifest_hash(&self) -> Digest {
        hash_bytes(&canonical_bytes(self).expect("manifest fields are canonicalizable"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deployment {
    pub manifest: ContractDefinition,
    pub manifest_hash: Digest,
}

pub fn deployment_key(contract_id: &str) -> String {
    format!("{LIFECYCLE}#{contract_id}")
}

pub trait Contract: Send + Sync {
    fn contract_id(&self) -> &'static str;

    fn operations(&self) -> &'static [&'static str];

    /// Contracts that run without a deployment record (system contracts).
    fn always_deployed(&self) -> bool {
        false
    }

    fn invoke(&self, ctx: &mut TxContext<'_>, operation: &str, args: &Doc) -> Result<(), ContractAbort>;
}

/// Execution context of one simulated transaction.
pub struct TxContext<'a> {
    state: &'a WorldState,
    channel_id: &'a str,
    submitter: &'a str,
    role: Role,
    timestamp: u64,
    reads: BTreeMap<String, Option<Version>>,
    writes: BTreeMap<String, Doc>,
    events: Vec<EventRecord>,
}

impl<'a> TxContext<'a> {
    pub fn new(
        state: &'a WorldState,
        channel_id: &'a str,
        submitter: &'a str,
        role: Role,
        timestamp: u64,
    ) -> Self {
        TxContext {
            state,
            channel_id,
            submitter,
            role,
            timestamp,
            reads: BTreeMap::new(),
            writes: BTreeMap::new(),
            events: Vec::new(),
        }
    }

    pub fn channel_id(&self) -> &str {
        self.channel_id
    }

    pub fn submitter(&self) -> &str {
        self.submitter
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Envelope timestamp in UTC milliseconds.
    pub fn timestamp(&self) -> u64 {
        self.timestamp
    }

    /// Reads a key, recording the committed version unless this transaction
    /// already wrote it.
    pub fn get_state(&mut self, key: &str) -> Option<Doc> {
        if let Some(v) = self.writes.get(key) {
            return Some(v.clone());
        }
        let entry = self.state.get(key);
        self.reads
            .entry(key.to_string())
            .or_insert_with(|| entry.map(|e| e.version));
        entry.map(|e| e.value.clone())
    }

    pub fn put_state(&mut self, key: &str, value: Doc) {
        self.writes.insert(key.to_string(), value);
    }

    pub fn emit(&mut self, event_name: &str, payload: Doc) {
        self.events.push(EventRecord { event_name: event_name.to_string(), payload });
    }

    pub fn registry<'c>(&'c mut self, registry_id: &'c str) -> AssetRegistry<'c, 'a> {
        AssetRegistry { ctx: self, registry_id }
    }

    pub fn into_rwset(self) -> Result<ReadWriteSet, ContractAbort> {
        for (k, v) in &self.writes {
            v.canonical()
                .map_err(|e| ContractAbort(format!("value for {k} is not canonicalizable: {e}")))?;
        }
        Ok(ReadWriteSet {
            reads: self.reads.into_iter().map(|(key, version)| ReadEntry { key, version }).collect(),
            writes: self.writes.into_iter().map(|(key, value)| WriteEntry { key, value }).collect(),
            events: self.events,
            abort: None,
        })
    }
}

/// Keyed access to one asset type: state key is `registry_id#identifier`.
pub struct AssetRegistry<'c, 'a> {
    ctx: &'c mut TxContext<'a>,
    registry_id: &'c str,
}

impl AssetRegistry<'_, '_> {
    pub fn key(&self, id: &str) -> String {
        format!("{}#{}", self.registry_id, id)
    }

    pub fn get(&mut self, id: &str) -> Result<Doc, ContractAbort> {
        let key = self.key(id);
        self.ctx
            .get_state(&key)
            .ok_or_else(|| ContractAbort(format!("asset not found: {key}")))
    }

    pub fn get_typed<T: DeserializeOwned>(&mut self, id: &str) -> Result<T, ContractAbort> {
        let key = self.key(id);
        self.get(id)?
            .to_typed()
            .map_err(|e| ContractAbort(format!("asset {key} is malformed: {e}")))
    }

    pub fn find(&mut self, id: &str) -> Option<Doc> {
        let key = self.key(id);
        self.ctx.get_state(&key)
    }

    pub fn exists(&mut self, id: &str) -> bool {
        self.find(id).is_some()
    }

    pub fn add(&mut self, id: &str, value: Doc) -> Result<(), ContractAbort> {
        let key = self.key(id);
        if self.ctx.get_state(&key).is_some() {
            return Err(ContractAbort(format!("duplicate asset: {key}")));
        }
        self.ctx.put_state(&key, value);
        Ok(())
    }

    pub fn update(&mut self, id: &str, value: Doc) -> Result<(), ContractAbort> {
        let key = self.key(id);
        if self.ctx.get_state(&key).is_none() {
            return Err(ContractAbort(format!("asset not found: {key}")));
        }
        self.ctx.put_state(&key, value);
        Ok(())
    }

    pub fn add_typed<T: Serialize>(&mut self, id: &str, value: &T) -> Result<(), ContractAbort> {
        self.add(id, to_doc(value)?)
    }

    pub fn update_typed<T: Serialize>(&mut self, id: &str, value: &T) -> Result<(), ContractAbort> {
        self.update(id, to_doc(value)?)
    }
}

pub fn to_doc<T: Serialize>(value: &T) -> Result<Doc, ContractAbort> {
    Doc::from_serialize(value).map_err(|e| ContractAbort(e.to_string()))
}

pub fn parse_args<T: DeserializeOwned>(args: &Doc) -> Result<T, ContractAbort> {
    args.to_typed().map_err(ContractAbort::bad_args)
}

/// Who is invoking what, with which arguments.
#[derive(Debug, Clone, Copy)]
pub struct Invocation<'a> {
    pub channel_id: &'a str,
    pub contract_id: &'a str,
    pub operation: &'a str,
    pub args: &'a Doc,
    pub submitter: &'a str,
    pub role: Role,
    pub timestamp: u64,
}

impl<'a> Invocation<'a> {
    pub fn from_envelope(env: &'a TransactionEnvelope, role: Role) -> Self {
        Invocation {
            channel_id: &env.channel_id,
            contract_id: &env.contract_id,
            operation: &env.operation,
            args: &env.args,
            submitter: &env.submitter,
            role,
            timestamp: env.timestamp,
        }
    }
}

/// Registry of compiled-in contracts. Stateless; one engine can simulate on
/// any number of snapshots concurrently.
#[derive(Clone, Default)]
pub struct Engine {
    contracts: BTreeMap<&'static str, Arc<dyn Contract>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("contracts", &self.contracts.keys()).finish()
    }
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_contract(mut self, contract: impl Contract + 'static) -> Self {
        self.register(Arc::new(contract));
        self
    }

    pub fn register(&mut self, contract: Arc<dyn Contract>) {
        self.contracts.insert(contract.contract_id(), contract);
    }

    pub fn contract(&self, id: &str) -> Option<&Arc<dyn Contract>> {
        self.contracts.get(id)
    }

    /// Simulates one invocation against `state`.
    pub fn invoke(
        &self,
        state: &WorldState,
        acl: &AccessControlList,
        inv: &Invocation<'_>,
    ) -> Result<ReadWriteSet, InvokeError> {
        if acl.check(inv.role, inv.contract_id, inv.operation) == Decision::Deny {
            return Err(InvokeError::AclDenied {
                role: inv.role,
                contract_id: inv.contract_id.to_string(),
                operation: inv.operation.to_string(),
            });
        }
        let mut ctx = TxContext::new(state, inv.channel_id, inv.submitter, inv.role, inv.timestamp);
        let outcome = if inv.contract_id == LIFECYCLE {
            match inv.operation {
                "deploy" => self.deploy(&mut ctx, inv.args),
                op => return Err(unknown_op(LIFECYCLE, op)),
            }
        } else {
            let contract = self
                .contracts
                .get(inv.contract_id)
                .ok_or_else(|| InvokeError::UnknownContract(inv.contract_id.to_string()))?;
            if !contract.always_deployed() {
                let deployed = ctx
                    .get_state(&deployment_key(inv.contract_id))
                    .ok_or_else(|| InvokeError::UnknownContract(inv.contract_id.to_string()))?;
                let deployment: Deployment = deployed
                    .to_typed()
                    .map_err(|e| InvokeError::ContractAbort(format!("corrupt deployment: {e}")))?;
                if !deployment.manifest.operations.iter().any(|o| o == inv.operation) {
                    return Err(unknown_op(inv.contract_id, inv.operation));
                }
            } else if !contract.operations().contains(&inv.operation) {
                return Err(unknown_op(inv.contract_id, inv.operation));
            }
            contract.invoke(&mut ctx, inv.operation, inv.args)
        };
        outcome
            .and_then(|()| ctx.into_rwset())
            .map_err(|ContractAbort(msg)| InvokeError::ContractAbort(msg))
    }

    fn deploy(&self, ctx: &mut TxContext<'_>, args: &Doc) -> Result<(), ContractAbort> {
        let manifest: ContractDefinition = parse_args(args)?;
        let Some(contract) = self.contracts.get(manifest.contract_id.as_str()) else {
            return Err(ContractAbort(format!("unknown contract {}", manifest.contract_id)));
        };
        if let Some(op) = manifest
            .operations
            .iter()
            .find(|op| !contract.operations().contains(&op.as_str()))
        {
            return Err(ContractAbort(format!(
                "manifest lists operation {op} not provided by {}",
                manifest.contract_id
            )));
        }
        let key = deployment_key(&manifest.contract_id);
        if let Some(current) = ctx.get_state(&key) {
            let current: Deployment = current.to_typed().map_err(|e| ContractAbort(e.to_string()))?;
            if manifest.version <= current.manifest.version {
                return Err(ContractAbort(format!(
                    "stale version: {} v{} is not newer than deployed v{}",
                    manifest.contract_id, manifest.version, current.manifest.version
                )));
            }
        }
        let deployment = Deployment { manifest_hash: manifest.manifest_hash(), manifest };
        ctx.put_state(&key, to_doc(&deployment)?);
        ctx.emit("ContractDeployed", to_doc(&deployment.manifest)?);
        Ok(())
    }
}

fn unknown_op(contract_id: &str, operation: &str) -> InvokeError {
    InvokeError::UnknownOperation {
        contract_id: contract_id.to_string(),
        operation: operation.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::testutil::write;

    /// A small key-value contract used to exercise the engine.
    struct Notes;

    impl Contract for Notes {
        fn contract_id(&self) -> &'static str {
            "notes"
        }

        fn operations(&self) -> &'static [&'static str] {
            &["put", "append", "read"]
        }

        fn invoke(&self, ctx: &mut TxContext<'_>, op: &str, args: &Doc) -> Result<(), ContractAbort> {
            let id = args.get("id").and_then(Doc::as_str).ok_or_else(|| ContractAbort::new("id"))?;
            let text = args.get("text").cloned().unwrap_or(Doc::Null);
            let mut reg = ctx.registry("com.example.Note");
            match op {
                "put" => reg.add(id, text),
                "append" => {
                    let old = reg.get(id)?;
                    reg.update(id, Doc::List(vec![old, text]))?;
                    ctx.emit("Appended", Doc::map().with("id", id));
                    Ok(())
                }
                "read" => reg.get(id).map(|_| ()),
                _ => unreachable!(),
            }
        }
    }

    fn admin_acl() -> AccessControlList {
        AccessControlList::consortium_default()
    }

    fn inv<'a>(contract: &'a str, op: &'a str, args: &'a Doc, role: Role) -> Invocation<'a> {
        Invocation {
            channel_id: "c",
            contract_id: contract,
            operation: op,
            args,
            submitter: "admin-1",
            role,
            timestamp: 0,
        }
    }

    fn manifest(version: u32) -> Doc {
        to_doc(&ContractDefinition {
            contract_id: "notes".into(),
            version,
            operations: vec!["put".into(), "append".into(), "read".into()],
            endorsement_policy_ref: "majority".into(),
        })
        .unwrap()
    }

    fn deploy(engine: &Engine, state: &mut WorldState, version: u32, height: u64) -> Result<(), InvokeError> {
        let m = manifest(version);
        let rw = engine.invoke(state, &admin_acl(), &inv(LIFECYCLE, "deploy", &m, Role::Admin))?;
        state.apply(&rw.writes, Version::new(height, 0));
        Ok(())
    }

    #[test]
    fn invoke_before_deploy_is_unknown_contract() {
        let engine = Engine::new().with_contract(Notes);
        let args = Doc::map().with("id", "n1");
        let err = engine
            .invoke(&WorldState::new(), &admin_acl(), &inv("notes", "put", &args, Role::Admin))
            .unwrap_err();
        assert_eq!(err, InvokeError::UnknownContract("notes".into()));
    }

    #[test]
    fn deploy_versions() {
        let engine = Engine::new().with_contract(Notes);
        let mut state = WorldState::new();
        deploy(&engine, &mut state, 1, 1).unwrap();
        let err = deploy(&engine, &mut state, 1, 2).unwrap_err();
        assert!(matches!(err, InvokeError::ContractAbort(m) if m.starts_with("stale version")));
        deploy(&engine, &mut state, 2, 3).unwrap();
        let d: Deployment = state.get(&deployment_key("notes")).unwrap().value.to_typed().unwrap();
        assert_eq!(d.manifest.version, 2);
        assert_eq!(d.manifest_hash, d.manifest.manifest_hash());
    }

    #[test]
    fn non_admin_cannot_deploy() {
        let engine = Engine::new().with_contract(Notes);
        let m = manifest(1);
        let err = engine
            .invoke(&WorldState::new(), &admin_acl(), &inv(LIFECYCLE, "deploy", &m, Role::Producer))
            .unwrap_err();
        assert!(matches!(err, InvokeError::AclDenied { role: Role::Producer, .. }));
    }

    #[test]
    fn registry_semantics() {
        let engine = Engine::new().with_contract(Notes);
        let mut state = WorldState::new();
        deploy(&engine, &mut state, 1, 1).unwrap();
        let acl = admin_acl();
        let put = Doc::map().with("id", "n1").with("text", "hello");

        let missing = engine.invoke(&state, &acl, &inv("notes", "read", &put, Role::Admin));
        assert!(matches!(missing, Err(InvokeError::ContractAbort(m)) if m.starts_with("asset not found")));

        let rw = engine.invoke(&state, &acl, &inv("notes", "put", &put, Role::Admin)).unwrap();
        assert_eq!(rw.writes.len(), 1);
        state.apply(&rw.writes, Version::new(2, 0));
        assert_eq!(state.get("com.example.Note#n1").unwrap().value, Doc::from("hello"));

        let dup = engine.invoke(&state, &acl, &inv("notes", "put", &put, Role::Admin));
        assert!(matches!(dup, Err(InvokeError::ContractAbort(m)) if m.starts_with("duplicate asset")));

        let absent = Doc::map().with("id", "n2");
        let upd = engine.invoke(&state, &acl, &inv("notes", "append", &absent, Role::Admin));
        assert!(matches!(upd, Err(InvokeError::ContractAbort(m)) if m.starts_with("asset not found")));
    }

    #[test]
    fn update_records_prior_read_and_event() {
        let engine = Engine::new().with_contract(Notes);
        let mut state = WorldState::new();
        deploy(&engine, &mut state, 1, 1).unwrap();
        state.apply(&[write("com.example.Note#n1", "a")], Version::new(2, 0));
        let args = Doc::map().with("id", "n1").with("text", "b");
        let rw = engine.invoke(&state, &admin_acl(), &inv("notes", "append", &args, Role::Admin)).unwrap();
        assert!(rw.reads.contains(&ReadEntry {
            key: "com.example.Note#n1".into(),
            version: Some(Version::new(2, 0))
        }));
        assert!(rw.reads.iter().any(|r| r.key == deployment_key("notes")));
        assert_eq!(rw.events.len(), 1);
        assert_eq!(rw.events[0].event_name, "Appended");
    }

    #[test]
    fn identical_inputs_identical_rwsets() {
        let engine = Engine::new().with_contract(Notes);
        let mut state = WorldState::new();
        deploy(&engine, &mut state, 1, 1).unwrap();
        let args = Doc::map().with("id", "n9").with("text", "x");
        let a = engine.invoke(&state, &admin_acl(), &inv("notes", "put", &args, Role::Admin)).unwrap();
        let b = Engine::new()
            .with_contract(Notes)
            .invoke(&state.clone(), &admin_acl(), &inv("notes", "put", &args, Role::Admin))
            .unwrap();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn operation_not_in_manifest() {
        let engine = Engine::new().with_contract(Notes);
        let mut state = WorldState::new();
        deploy(&engine, &mut state, 1, 1).unwrap();
        let args = Doc::map().with("id", "n1");
        let err = engine
            .invoke(&state, &admin_acl(), &inv("notes", "erase", &args, Role::Admin))
            .unwrap_err();
        assert!(matches!(err, InvokeError::UnknownOperation { .. }));
    }
}
