use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{verify_signature, AccessControlList, Decision, Identity, Participant, Role};
use crate::doc::DocError;
use crate::ledger::{hex_bytes, TransactionEnvelope, WorldState};

/// State keys used on the governance channel.
pub mod keys {
    pub const PARTICIPANT: &str = "participant#";
    pub const IDENTITY: &str = "identity#";
    pub const NODE: &str = "node#";
    pub const ACL: &str = "acl#consortium";

    pub fn participant(id: &str) -> String {
        format!("{PARTICIPANT}{id}")
    }

    pub fn identity(id: &str) -> String {
        format!("{IDENTITY}{id}")
    }

    pub fn node(id: &str) -> String {
        format!("{NODE}{id}")
    }
}

/// A peer's endorsement key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: String,
    pub org: super::Org,
    pub scheme: String,
    #[serde(with = "hex_bytes")]
    pub public_key: Vec<u8>,
}

/// Identity history of one participant, oldest first. Only the last entry
/// can be active.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityHistory {
    pub history: Vec<Identity>,
}

impl IdentityHistory {
    pub fn active(&self) -> Option<&Identity> {
        self.history.last().filter(|i| !i.revoked)
    }
}

/// Membership view decoded from governance-channel state.
#[derive(Debug, Clone, Default)]
pub struct Membership {
    participants: BTreeMap<String, Participant>,
    identities: BTreeMap<String, IdentityHistory>,
    nodes: BTreeMap<String, NodeRecord>,
    acl: AccessControlList,
}

impl Membership {
    pub fn from_state(state: &WorldState) -> Result<Self, DocError> {
        let mut m = Membership::default();
        for (_, e) in state.scan_prefix(keys::PARTICIPANT) {
            let p: Participant = e.value.to_typed()?;
            m.participants.insert(p.participant_id.clone(), p);
        }
        for (k, e) in state.scan_prefix(keys::IDENTITY) {
            let h: IdentityHistory = e.value.to_typed()?;
            m.identities.insert(k[keys::IDENTITY.len()..].to_string(), h);
        }
        for (_, e) in state.scan_prefix(keys::NODE) {
            let n: NodeRecord = e.value.to_typed()?;
            m.nodes.insert(n.node_id.clone(), n);
        }
        if let Some(e) = state.get(keys::ACL) {
            m.acl = e.value.to_typed()?;
        }
        Ok(m)
    }

    pub fn participant(&self, id: &str) -> Option<&Participant> {
        self.participants.get(id)
    }

    pub fn participants(&self) -> impl Iterator<Item = &Participant> {
        self.participants.values()
    }

    pub fn identity_history(&self, id: &str) -> &[Identity] {
        self.identities.get(id).map_or(&[], |h| h.history.as_slice())
    }

    pub fn active_identity(&self, id: &str) -> Option<&Identity> {
        self.identities.get(id).and_then(IdentityHistory::active)
    }

    pub fn is_revoked(&self, id: &str) -> bool {
        !self.identity_history(id).is_empty() && self.active_identity(id).is_none()
    }

    pub fn node(&self, id: &str) -> Option<&NodeRecord> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values()
    }

    pub fn acl(&self) -> &AccessControlList {
        &self.acl
    }

    /// Cryptographic check against any key the submitter ever held.
    pub fn signature_matches_history(&self, env: &TransactionEnvelope) -> Result<(), String> {
        let bytes = env.signing_bytes().map_err(|e| e.to_string())?;
        let history = self.identity_history(&env.submitter);
        if history.is_empty() {
            return Err(format!("no identity registered for {}", env.submitter));
        }
        if history.iter().any(|i| i.verify(&bytes, &env.signature)) {
            Ok(())
        } else {
            Err(format!("signature does not match any key of {}", env.submitter))
        }
    }

    /// Checks that the submitter is registered, holds an active identity
    /// that produced the signature, and returns their role.
    pub fn authenticate(&self, env: &TransactionEnvelope) -> Result<Role, String> {
        let participant = self
            .participant(&env.submitter)
            .ok_or_else(|| format!("unknown submitter {}", env.submitter))?;
        let identity = self
            .active_identity(&env.submitter)
            .ok_or_else(|| format!("identity of {} is revoked or missing", env.submitter))?;
        let bytes = env.signing_bytes().map_err(|e| e.to_string())?;
        if !identity.verify(&bytes, &env.signature) {
            return Err("envelope signature invalid".into());
        }
        Ok(participant.role)
    }

    /// `authenticate` plus the access-control decision for the envelope's operation.
    pub fn authorize(&self, env: &TransactionEnvelope) -> Result<Role, String> {
        let role = self.authenticate(env)?;
        match self.acl.check(role, &env.contract_id, &env.operation) {
            Decision::Allow => Ok(role),
            Decision::Deny => Err(format!(
                "access denied for role {role} on {}.{}",
                env.contract_id, env.operation
            )),
        }
    }

    /// Verifies a node's signature over `message`.
    pub fn verify_node_signature(
        &self,
        node_id: &str,
        message: &[u8],
        sig: &crate::ledger::Signature,
    ) -> Result<&NodeRecord, String> {
        let node = self.node(node_id).ok_or_else(|| format!("unknown node {node_id}"))?;
        if verify_signature(&node.scheme, &node.public_key, message, sig) {
            Ok(node)
        } else {
            Err(format!("endorsement signature of {node_id} invalid"))
        }
    }
}
