use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use super::topology::{ChannelConfig, EndorsementPolicy, PolicyRule, GOVERNANCE_CHANNEL};
use crate::contract::{parse_args, to_doc, Contract, ContractAbort, TxContext};
use crate::digest::Digest;
use crate::doc::{Doc, DocError};
use crate::identity::{membership_keys as keys, AccessControlList, Decision, Identity, IdentityHistory, Membership, NodeRecord, Participant, Role, ED25519};
use crate::ledger::{BlockHeader, TransactionEnvelope, TxEntry, TxVerifier, WorldState};

pub const GOVERNANCE: &str = "governance";

pub const OPERATIONS: &[&str] = &[
    "register_participant",
    "issue_identity",
    "revoke_identity",
    "register_node",
    "set_acl",
    "set_policy",
    "create_channel",
];

pub fn channel_key(id: &str) -> String {
    format!("channel#{id}")
}

pub fn policy_key(id: &str) -> String {
    format!("policy#{id}")
}

/// Bytes an endorsing node signs.
pub fn endorsement_message(channel_id: &str, tx_id: &Digest, rwset_digest: &Digest) -> Vec<u8> {
    let mut m = Vec::with_capacity(channel_id.len() + 72);
    m.extend_from_slice(b"endorse\0");
    m.extend_from_slice(channel_id.as_bytes());
    m.push(0);
    m.extend_from_slice(tx_id.as_bytes());
    m.extend_from_slice(rwset_digest.as_bytes());
    m
}

/// Consortium membership, identities, ACL, and channel configuration, as
/// manipulated by transactions on the governance channel.
pub struct GovernanceContract;

#[derive(Deserialize)]
struct RegisterArgs {
    participant: Participant,
    #[serde(default)]
    identity: Option<Identity>,
}

#[derive(Deserialize)]
struct IdentityArgs {
    identity: Identity,
}

#[derive(Deserialize)]
struct RevokeArgs {
    participant_id: String,
}

#[derive(Deserialize)]
struct NodeArgs {
    node: NodeRecord,
}

#[derive(Deserialize)]
struct AclArgs {
    acl: AccessControlList,
}

#[derive(Deserialize)]
struct PolicyArgs {
    policy: EndorsementPolicy,
}

#[derive(Deserialize)]
struct ChannelArgs {
    channel: ChannelConfig,
}

fn abort(code: &str, msg: impl std::fmt::Display) -> ContractAbort {
    ContractAbort(format!("{code}: {msg}"))
}

fn typed<T: serde::de::DeserializeOwned>(doc: Doc) -> Result<T, ContractAbort> {
    doc.to_typed().map_err(|e| ContractAbort(format!("corrupt governance record: {e}")))
}

fn check_identity(identity: &Identity) -> Result<(), ContractAbort> {
    if identity.scheme != ED25519 || identity.public_key.len() != 32 {
        return Err(abort("BadIdentity", "scheme must be ed25519 with a 32-byte key"));
    }
    if identity.revoked {
        return Err(abort("BadIdentity", "cannot issue a revoked identity"));
    }
    Ok(())
}

fn issue(ctx: &mut TxContext<'_>, identity: Identity) -> Result<(), ContractAbort> {
    check_identity(&identity)?;
    let key = keys::identity(&identity.participant_id);
    let mut history: IdentityHistory = ctx.get_state(&key).map(typed).transpose()?.unwrap_or_default();
    if history.active().is_some() {
        return Err(abort(
            "ActiveIdentity",
            format!("{} already holds an active identity; revoke it first", identity.participant_id),
        ));
    }
    ctx.emit("IdentityIssued", Doc::map().with("participant_id", identity.participant_id.as_str()));
    history.history.push(identity);
    ctx.put_state(&key, to_doc(&history)?);
    Ok(())
}

impl Contract for GovernanceContract {
    fn contract_id(&self) -> &'static str {
        GOVERNANCE
    }

    fn operations(&self) -> &'static [&'static str] {
        OPERATIONS
    }

    fn always_deployed(&self) -> bool {
        true
    }

    fn invoke(&self, ctx: &mut TxContext<'_>, operation: &str, args: &Doc) -> Result<(), ContractAbort> {
        if ctx.channel_id() != GOVERNANCE_CHANNEL {
            return Err(abort("WrongChannel", "governance runs only on the governance channel"));
        }
        match operation {
            "register_participant" => {
                let a: RegisterArgs = parse_args(args)?;
                let key = keys::participant(&a.participant.participant_id);
                if ctx.get_state(&key).is_some() {
                    return Err(abort(
                        "DuplicateId",
                        format!("participant {} already registered", a.participant.participant_id),
                    ));
                }
                ctx.put_state(&key, to_doc(&a.participant)?);
                ctx.emit("ParticipantRegistered", to_doc(&a.participant)?);
                if let Some(identity) = a.identity {
                    if identity.participant_id != a.participant.participant_id {
                        return Err(abort("BadIdentity", "identity belongs to another participant"));
                    }
                    issue(ctx, identity)?;
                }
                Ok(())
            }
            "issue_identity" => {
                let a: IdentityArgs = parse_args(args)?;
                if ctx.get_state(&keys::participant(&a.identity.participant_id)).is_none() {
                    return Err(abort("UnknownParticipant", &a.identity.participant_id));
                }
                issue(ctx, a.identity)
            }
            "revoke_identity" => {
                let a: RevokeArgs = parse_args(args)?;
                let key = keys::identity(&a.participant_id);
                let mut history: IdentityHistory = ctx
                    .get_state(&key)
                    .map(typed)
                    .transpose()?
                    .ok_or_else(|| abort("UnknownParticipant", &a.participant_id))?;
                match history.history.last_mut() {
                    Some(last) if !last.revoked => last.revoked = true,
                    _ => return Err(abort("RevokedIdentity", format!("{} has no active identity", a.participant_id))),
                }
                ctx.put_state(&key, to_doc(&history)?);
                ctx.emit("IdentityRevoked", Doc::map().with("participant_id", a.participant_id.as_str()));
                Ok(())
            }
            "register_node" => {
                let a: NodeArgs = parse_args(args)?;
                if a.node.scheme != ED25519 || a.node.public_key.len() != 32 {
                    return Err(abort("BadIdentity", "node key must be ed25519"));
                }
                let key = keys::node(&a.node.node_id);
                if ctx.get_state(&key).is_some() {
                    return Err(abort("DuplicateId", format!("node {} already registered", a.node.node_id)));
                }
                ctx.put_state(&key, to_doc(&a.node)?);
                Ok(())
            }
            "set_acl" => {
                let a: AclArgs = parse_args(args)?;
                // Keep at least one way to govern.
                if a.acl.check(Role::Admin, GOVERNANCE, "set_acl") != Decision::Allow {
                    return Err(abort("BadAcl", "admin must retain governance.set_acl"));
                }
                ctx.put_state(keys::ACL, to_doc(&a.acl)?);
                ctx.emit("AclChanged", Doc::map().with("rules", a.acl.rules.len() as u64));
                Ok(())
            }
            "set_policy" => {
                let a: PolicyArgs = parse_args(args)?;
                ctx.put_state(&policy_key(&a.policy.policy_id), to_doc(&a.policy)?);
                Ok(())
            }
            "create_channel" => {
                let a: ChannelArgs = parse_args(args)?;
                let c = a.channel;
                let key = channel_key(&c.channel_id);
                if ctx.get_state(&key).is_some() {
                    return Err(abort("DuplicateChannel", format!("channel {} already exists", c.channel_id)));
                }
                if c.member_orgs.is_empty() || c.batch_max_tx < 1 {
                    return Err(abort("BadChannel", "need at least one member org and batch_max_tx >= 1"));
                }
                if ctx.get_state(&policy_key(&c.endorsement_policy)).is_none() {
                    return Err(abort("BadChannel", format!("unknown policy {}", c.endorsement_policy)));
                }
                ctx.put_state(&key, to_doc(&c)?);
                ctx.emit("ChannelCreated", to_doc(&c)?);
                Ok(())
            }
            _ => unreachable!("engine checks operation names"),
        }
    }
}

/// Decoded governance state at one height.
#[derive(Debug, Clone, Default)]
pub struct GovernanceView {
    pub height: u64,
    pub membership: Membership,
    pub channels: BTreeMap<String, ChannelConfig>,
    pub policies: BTreeMap<String, EndorsementPolicy>,
}

impl GovernanceView {
    pub fn from_state(state: &WorldState, height: u64) -> Result<Self, DocError> {
        let membership = Membership::from_state(state)?;
        let mut channels = BTreeMap::new();
        for (_, e) in state.scan_prefix("channel#") {
            let c: ChannelConfig = e.value.to_typed()?;
            channels.insert(c.channel_id.clone(), c);
        }
        let mut policies = BTreeMap::new();
        for (_, e) in state.scan_prefix("policy#") {
            let p: EndorsementPolicy = e.value.to_typed()?;
            policies.insert(p.policy_id.clone(), p);
        }
        Ok(GovernanceView { height, membership, channels, policies })
    }

    pub fn channel(&self, id: &str) -> Result<(&ChannelConfig, PolicyRule), String> {
        let c = self.channels.get(id).ok_or_else(|| format!("unknown channel {id}"))?;
        let p = self
            .policies
            .get(&c.endorsement_policy)
            .ok_or_else(|| format!("channel {id} references unknown policy {}", c.endorsement_policy))?;
        Ok((c, p.rule))
    }

    /// Distinct member orgs behind a set of endorsements, after checking
    /// each endorsement's node, org, signature and digest.
    pub fn endorsing_orgs(&self, channel: &str, entry: &TxEntry) -> Result<BTreeSet<crate::identity::Org>, String> {
        let (config, _) = self.channel(channel)?;
        let digest = entry.rwset.digest().map_err(|e| e.to_string())?;
        let mut orgs = BTreeSet::new();
        for e in &entry.endorsements {
            let msg = endorsement_message(channel, &entry.envelope.tx_id, &e.rwset_digest);
            let node = self.membership.verify_node_signature(&e.node_id, &msg, &e.signature)?;
            if node.org.as_str() != e.org {
                return Err(format!("endorsement of {} claims org {}", e.node_id, e.org));
            }
            if e.rwset_digest != digest {
                return Err(format!("endorsement of {} is for a different read-write set", e.node_id));
            }
            if !config.member_orgs.contains(&node.org) {
                return Err(format!("endorser {} is not in a member org of {channel}", e.node_id));
            }
            orgs.insert(node.org);
        }
        Ok(orgs)
    }

    /// Full commit-time check: submitter identity and ACL, then the
    /// channel's endorsement policy.
    pub fn check_tx(&self, channel: &str, entry: &TxEntry) -> Result<(), String> {
        self.membership.authorize(&entry.envelope)?;
        let (config, rule) = self.channel(channel)?;
        let orgs = self.endorsing_orgs(channel, entry)?;
        if !rule.satisfied(orgs.len(), config.member_orgs.len()) {
            return Err(format!(
                "endorsement policy {rule:?} not met: {} of {} orgs",
                orgs.len(),
                config.member_orgs.len()
            ));
        }
        Ok(())
    }

    /// Signature check against every key the submitter ever held.
    pub fn check_signature(&self, env: &TransactionEnvelope) -> Result<(), String> {
        self.membership.signature_matches_history(env)
    }
}

/// Validates blocks against the governance snapshot named in their header.
pub struct SnapshotVerifier<'a> {
    pub snapshots: &'a [std::sync::Arc<GovernanceView>],
}

impl SnapshotVerifier<'_> {
    pub fn view(&self, header: &BlockHeader) -> Result<&GovernanceView, String> {
        self.snapshots
            .get(header.governance_height as usize)
            .map(|v| v.as_ref())
            .ok_or_else(|| format!("governance height {} not available", header.governance_height))
    }
}

impl TxVerifier for SnapshotVerifier<'_> {
    fn verify(&self, header: &BlockHeader, entry: &TxEntry) -> Result<(), String> {
        self.view(header)?.check_tx(&header.channel_id, entry)
    }
}
